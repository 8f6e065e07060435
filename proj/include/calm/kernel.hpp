// Copyright 2026 The calm-detect Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "calm/core.hpp"

namespace calm {

enum class KernelKind { gaussian_rbf };

/// Kernel choice; an empty sigma means "median heuristic, not yet resolved".
struct KernelSpec {
  KernelKind kind = KernelKind::gaussian_rbf;
  std::optional<double> sigma;

  static KernelSpec median() { return {}; }
  static KernelSpec fixed(double sigma) {
    if (!(sigma > 0.0) || !std::isfinite(sigma)) {
      throw InputError("kernel bandwidth must be positive and finite");
    }
    return {KernelKind::gaussian_rbf, sigma};
  }

  bool resolved() const { return sigma.has_value(); }
};

inline double squared_distance(Observation x, Observation y) {
  require_same_dim(x, y);
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double diff = x[i] - y[i];
    acc += diff * diff;
  }
  return acc;
}

/// exp(-|x - y|^2 / (2 sigma^2)).
inline double rbf_kernel(Observation x, Observation y, double sigma) {
  if (!(sigma > 0.0)) {
    throw InputError("kernel bandwidth must be positive");
  }
  return std::exp(-squared_distance(x, y) / (2.0 * sigma * sigma));
}

/// Gaussian RBF kernel with a fixed, resolved bandwidth.
class RbfKernel {
 public:
  explicit RbfKernel(double sigma) : sigma_(sigma) {
    if (!(sigma > 0.0) || !std::isfinite(sigma)) {
      throw InputError("kernel bandwidth must be positive and finite");
    }
    scale_ = -1.0 / (2.0 * sigma * sigma);
  }

  double operator()(Observation x, Observation y) const {
    return std::exp(scale_ * squared_distance(x, y));
  }

  double sigma() const { return sigma_; }

 private:
  double sigma_;
  double scale_;
};

/// Wraps a kernel and counts every evaluation into a shared counter.
template <class Kernel>
class CountingKernel {
 public:
  CountingKernel(Kernel inner, std::atomic<std::uint64_t>& counter)
      : inner_(std::move(inner)), counter_(&counter) {}

  double operator()(Observation x, Observation y) const {
    counter_->fetch_add(1, std::memory_order_relaxed);
    return inner_(x, y);
  }

 private:
  Kernel inner_;
  std::atomic<std::uint64_t>* counter_;
};

/**
 * Median of the Euclidean distances over all distinct unordered pairs.
 * An even number of distances averages the two middle order statistics.
 */
inline double median_heuristic(const Samples& data) {
  const std::size_t n = data.size();
  if (n < 2) {
    throw InputError("median heuristic needs at least 2 observations");
  }
  std::vector<double> dists;
  dists.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      dists.push_back(std::sqrt(squared_distance(data[i], data[j])));
    }
  }
  const std::size_t m = dists.size();
  const std::size_t hi = m / 2;
  std::nth_element(dists.begin(), dists.begin() + hi, dists.end());
  double median = dists[hi];
  if (m % 2 == 0) {
    const double lo = *std::max_element(dists.begin(), dists.begin() + hi);
    median = 0.5 * (lo + median);
  }
  if (!(median > 0.0)) {
    throw ConfigError(
        "median pairwise distance is 0; cannot derive a kernel bandwidth");
  }
  return median;
}

/// Fills in a median bandwidth from `data` when the spec asks for one.
inline KernelSpec resolve_kernel(KernelSpec spec, const Samples& data) {
  if (!spec.resolved()) {
    spec.sigma = median_heuristic(data);
  }
  return spec;
}

inline RbfKernel make_kernel(const KernelSpec& spec) {
  if (!spec.resolved()) {
    throw StateError("kernel bandwidth must be resolved before evaluation");
  }
  return RbfKernel(*spec.sigma);
}

}  // namespace calm
