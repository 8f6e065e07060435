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

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace calm {

/// Caller supplied malformed data (dimension mismatch, bad sizes, ...).
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Threshold configuration could not produce a usable result.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operation is not valid in the object's current state.
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// A read-only view of one observation.
using Observation = std::span<const double>;

/**
 * Dense row-major collection of observations sharing one dimension.
 *
 * Rows are contiguous so kernel loops over a sample stay cache friendly.
 */
class Samples {
 public:
  Samples() = default;
  explicit Samples(std::size_t dim) : dim_(dim) {}
  Samples(std::size_t rows, std::size_t dim)
      : dim_(dim), values_(rows * dim, 0.0) {}
  Samples(std::size_t dim, std::vector<double> values)
      : dim_(dim), values_(std::move(values)) {
    if (dim_ == 0 || values_.size() % dim_ != 0) {
      throw InputError("sample buffer is not a whole number of rows");
    }
  }

  /// Builds from literal rows; every row must have the same length.
  static Samples from_rows(
      std::initializer_list<std::initializer_list<double>> rows) {
    Samples out;
    for (const auto& row : rows) {
      out.push_back(std::span<const double>(row.begin(), row.size()));
    }
    return out;
  }

  /// One-dimensional sample from scalars.
  static Samples from_scalars(std::span<const double> xs) {
    return Samples(1, std::vector<double>(xs.begin(), xs.end()));
  }
  static Samples from_scalars(std::initializer_list<double> xs) {
    return Samples(1, std::vector<double>(xs));
  }

  std::size_t size() const { return dim_ == 0 ? 0 : values_.size() / dim_; }
  std::size_t dim() const { return dim_; }
  bool empty() const { return values_.empty(); }

  Observation operator[](std::size_t i) const {
    return {values_.data() + i * dim_, dim_};
  }
  std::span<double> row(std::size_t i) {
    return {values_.data() + i * dim_, dim_};
  }

  std::span<const double> values() const { return values_; }

  void reserve(std::size_t rows) { values_.reserve(rows * dim_); }

  void push_back(Observation x) {
    if (dim_ == 0 && values_.empty()) {
      dim_ = x.size();
    }
    if (x.size() != dim_ || dim_ == 0) {
      throw InputError("observation has dimension " + std::to_string(x.size()) +
                       ", expected " + std::to_string(dim_));
    }
    values_.insert(values_.end(), x.begin(), x.end());
  }

  /// Gathers the given rows, in the given order.
  Samples select(std::span<const std::size_t> indices) const {
    Samples out(dim_);
    out.values_.reserve(indices.size() * dim_);
    for (std::size_t i : indices) {
      if (i >= size()) {
        throw InputError("row index " + std::to_string(i) + " out of range");
      }
      auto r = (*this)[i];
      out.values_.insert(out.values_.end(), r.begin(), r.end());
    }
    return out;
  }

  bool all_finite() const {
    for (double v : values_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  friend bool operator==(const Samples&, const Samples&) = default;

 private:
  std::size_t dim_ = 0;
  std::vector<double> values_;
};

inline void require_same_dim(Observation x, Observation y) {
  if (x.size() != y.size()) {
    throw InputError("dimension mismatch: " + std::to_string(x.size()) +
                     " vs " + std::to_string(y.size()));
  }
}

}  // namespace calm
