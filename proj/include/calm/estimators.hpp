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

#include <concepts>
#include <memory>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "calm/core.hpp"
#include "calm/kernel.hpp"
#include "calm/mmd.hpp"

namespace calm {

/**
 * Requirements on a two-sample distance estimator usable by calibration and
 * by the detector.
 *
 *  - batch(x, y): the statistic on two explicit samples.
 *  - prepare(full): per-reference-set precomputation. The returned object's
 *    window_statistics(holdout, W, out) treats the rows of `full` outside
 *    `holdout` as the reference window and writes the statistic for each
 *    length-W window sliding over the ordered holdout rows.
 *  - make_stream(ref, W): an incremental statistic over a sliding window.
 */
template <class E>
concept TwoSampleEstimator =
    requires(const E& e, const Samples& s, std::shared_ptr<const Samples> ref,
             std::span<const std::size_t> idx, std::span<double> out) {
      { e.name() } -> std::convertible_to<std::string>;
      { e.batch(s, s) } -> std::convertible_to<double>;
      e.prepare(s).window_statistics(idx, std::size_t{}, out);
      e.make_stream(ref, std::size_t{});
    };

/// Row indices of `n` that are not listed in `excluded`, ascending.
inline std::vector<std::size_t> complement_indices(
    std::size_t n, std::span<const std::size_t> excluded) {
  std::vector<char> mark(n, 0);
  for (std::size_t i : excluded) {
    if (i >= n) throw InputError("index out of range");
    mark[i] = 1;
  }
  std::vector<std::size_t> out;
  out.reserve(n - excluded.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (!mark[i]) out.push_back(i);
  }
  return out;
}

inline void check_window_output(std::size_t holdout, std::size_t window,
                                std::size_t out) {
  if (window == 0 || holdout < window || out != holdout - window + 1) {
    throw InputError("window statistics: inconsistent holdout/window sizes");
  }
}

/// Squared MMD with a kernel of type K.
template <class Kernel = RbfKernel>
class MmdEstimator {
 public:
  explicit MmdEstimator(Kernel kernel) : kernel_(std::move(kernel)) {}

  std::string name() const { return "mmd"; }
  const Kernel& kernel() const { return kernel_; }

  double batch(const Samples& x, const Samples& y) const {
    return mmd2_batch(x, y, kernel_);
  }

  /// Holds the off-diagonal sum of the full kernel matrix, computed once.
  class Prepared {
   public:
    Prepared(const Samples& full, const Kernel& kernel)
        : full_(&full), kernel_(kernel), total_(offdiag_sum(full, kernel)) {}

    void window_statistics(std::span<const std::size_t> holdout,
                           std::size_t window, std::span<double> out) const {
      check_window_output(holdout.size(), window, out.size());
      const auto ref = complement_indices(full_->size(), holdout);
      const auto view =
          partition_sums(*full_, ref, holdout, kernel_, total_, false);
      for (std::size_t s = 0; s < out.size(); ++s) {
        out[s] = view.window_statistic(s, window);
      }
    }

    double total_offdiag_sum() const { return total_; }

   private:
    const Samples* full_;
    Kernel kernel_;
    double total_;
  };

  Prepared prepare(const Samples& full) const { return Prepared(full, kernel_); }

  MmdStream<Kernel> make_stream(std::shared_ptr<const Samples> ref,
                                std::size_t window) const {
    return MmdStream<Kernel>(std::move(ref), kernel_, window);
  }

 private:
  Kernel kernel_;
};

/// Sliding-window difference in sample means.
class MeanDiffStream {
 public:
  static constexpr std::uint64_t kRefreshInterval = 10000;

  MeanDiffStream(std::shared_ptr<const Samples> ref, std::size_t window)
      : ref_(std::move(ref)), window_(window) {
    if (!ref_ || ref_->empty() || window_ < 1) {
      throw InputError("mean difference stream needs a reference and W >= 1");
    }
    ref_mean_ = sample_mean(*ref_);
    slots_ = Samples(window_, ref_->dim());
  }

  void fill(const Samples& window) {
    if (window.size() != window_ || window.dim() != ref_->dim()) {
      throw InputError("initial test window must be W rows of matching dim");
    }
    for (std::size_t s = 0; s < window_; ++s) {
      auto src = window[s];
      std::copy(src.begin(), src.end(), slots_.row(s).begin());
    }
    head_ = 0;
    resum();
    ready_ = true;
  }

  double update(Observation z) {
    if (!ready_) throw StateError("mean difference stream used before fill()");
    if (z.size() != ref_->dim()) {
      throw InputError("observation dimension differs from reference");
    }
    auto slot = slots_.row(head_);
    for (std::size_t c = 0; c < z.size(); ++c) {
      window_sum_[c] += z[c] - slot[c];
      slot[c] = z[c];
    }
    head_ = (head_ + 1) % window_;
    if (++updates_since_refresh_ >= kRefreshInterval) resum();
    return statistic();
  }

  double statistic() const {
    if (!ready_) throw StateError("mean difference stream used before fill()");
    double acc = 0.0;
    const double w = static_cast<double>(window_);
    for (std::size_t c = 0; c < ref_mean_.size(); ++c) {
      const double diff = ref_mean_[c] - window_sum_[c] / w;
      acc += diff * diff;
    }
    return std::sqrt(acc);
  }

  Samples window_contents() const {
    Samples out(ref_->dim());
    for (std::size_t i = 0; i < window_; ++i) {
      out.push_back(slots_[(head_ + i) % window_]);
    }
    return out;
  }

  bool ready() const { return ready_; }
  std::size_t window_size() const { return window_; }
  std::size_t ref_size() const { return ref_->size(); }
  std::size_t dim() const { return ref_->dim(); }

 private:
  void resum() {
    window_sum_.assign(ref_->dim(), 0.0);
    for (std::size_t s = 0; s < window_; ++s) {
      auto r = slots_[s];
      for (std::size_t c = 0; c < r.size(); ++c) window_sum_[c] += r[c];
    }
    updates_since_refresh_ = 0;
  }

  std::shared_ptr<const Samples> ref_;
  std::size_t window_;
  std::vector<double> ref_mean_;
  std::vector<double> window_sum_;
  Samples slots_;
  std::size_t head_ = 0;
  bool ready_ = false;
  std::uint64_t updates_since_refresh_ = 0;
};

class MeanDiffEstimator {
 public:
  std::string name() const { return "mean-diff"; }

  double batch(const Samples& x, const Samples& y) const {
    return mean_difference_statistic(x, y);
  }

  class Prepared {
   public:
    explicit Prepared(const Samples& full)
        : full_(&full), total_(full.dim(), 0.0) {
      for (std::size_t i = 0; i < full.size(); ++i) {
        auto r = full[i];
        for (std::size_t c = 0; c < r.size(); ++c) total_[c] += r[c];
      }
    }

    void window_statistics(std::span<const std::size_t> holdout,
                           std::size_t window, std::span<double> out) const {
      check_window_output(holdout.size(), window, out.size());
      const std::size_t d = full_->dim();
      std::vector<double> ref_mean = total_;
      for (std::size_t i : holdout) {
        if (i >= full_->size()) throw InputError("index out of range");
        auto r = (*full_)[i];
        for (std::size_t c = 0; c < d; ++c) ref_mean[c] -= r[c];
      }
      const double m = static_cast<double>(full_->size() - holdout.size());
      for (double& v : ref_mean) v /= m;
      for (std::size_t s = 0; s < out.size(); ++s) {
        std::vector<double> sum(d, 0.0);
        for (std::size_t i = s; i < s + window; ++i) {
          auto r = (*full_)[holdout[i]];
          for (std::size_t c = 0; c < d; ++c) sum[c] += r[c];
        }
        double acc = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
          const double diff = ref_mean[c] - sum[c] / static_cast<double>(window);
          acc += diff * diff;
        }
        out[s] = std::sqrt(acc);
      }
    }

   private:
    const Samples* full_;
    std::vector<double> total_;
  };

  Prepared prepare(const Samples& full) const { return Prepared(full); }

  MeanDiffStream make_stream(std::shared_ptr<const Samples> ref,
                             std::size_t window) const {
    return MeanDiffStream(std::move(ref), window);
  }
};

static_assert(TwoSampleEstimator<MmdEstimator<>>);
static_assert(TwoSampleEstimator<MeanDiffEstimator>);

/// Estimators selectable at run time by name.
using AnyEstimator = std::variant<MmdEstimator<>, MeanDiffEstimator>;

/// "mmd" needs a resolved kernel; "mean-diff" ignores it.
inline AnyEstimator make_estimator(const std::string& name,
                                   const KernelSpec& kernel) {
  if (name == "mmd") return MmdEstimator<>(make_kernel(kernel));
  if (name == "mean-diff") return MeanDiffEstimator{};
  throw InputError("unknown estimator '" + name + "'");
}

}  // namespace calm
