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
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "calm/core.hpp"
#include "calm/kernel.hpp"

namespace calm {

/// Sum of k(x_i, x_j) over ordered pairs i != j; upper triangle, row-major.
template <class Kernel>
double offdiag_sum(const Samples& x, const Kernel& k) {
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double row = 0.0;
    for (std::size_t j = i + 1; j < x.size(); ++j) row += k(x[i], x[j]);
    acc += row;
  }
  return 2.0 * acc;
}

/// Sum of k(x_i, y_j) over all pairs, row-major over x.
template <class Kernel>
double cross_sum(const Samples& x, const Samples& y, const Kernel& k) {
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < y.size(); ++j) row += k(x[i], y[j]);
    acc += row;
  }
  return acc;
}

/// Combines block sums into the unbiased squared-MMD estimate.
inline double mmd2_from_sums(double ref_offdiag, double test_offdiag,
                             double cross, std::size_t m, std::size_t w) {
  const double md = static_cast<double>(m);
  const double wd = static_cast<double>(w);
  return ref_offdiag / (md * (md - 1.0)) + test_offdiag / (wd * (wd - 1.0)) -
         2.0 * cross / (md * wd);
}

/**
 * Quadratic-time unbiased estimate of MMD^2 between samples x (size M) and
 * y (size W). The result may be negative.
 */
template <class Kernel>
double mmd2_batch(const Samples& x, const Samples& y, const Kernel& k) {
  if (x.size() < 2 || y.size() < 2) {
    throw InputError("mmd2_batch needs at least 2 observations per sample");
  }
  if (x.dim() != y.dim()) {
    throw InputError("mmd2_batch: samples have different dimensions");
  }
  return mmd2_from_sums(offdiag_sum(x, k), offdiag_sum(y, k),
                        cross_sum(x, y, k), x.size(), y.size());
}

inline double mmd2_batch(const Samples& x, const Samples& y,
                         const KernelSpec& spec) {
  return mmd2_batch(x, y, make_kernel(spec));
}

inline std::vector<double> sample_mean(const Samples& x) {
  std::vector<double> mean(x.dim(), 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    auto r = x[i];
    for (std::size_t c = 0; c < mean.size(); ++c) mean[c] += r[c];
  }
  for (double& v : mean) v /= static_cast<double>(x.size());
  return mean;
}

/// Euclidean norm of the difference between the two sample means.
inline double mean_difference_statistic(const Samples& x, const Samples& y) {
  if (x.empty() || y.empty()) {
    throw InputError("mean difference needs nonempty samples");
  }
  if (x.dim() != y.dim()) {
    throw InputError("mean difference: samples have different dimensions");
  }
  const auto mx = sample_mean(x);
  const auto my = sample_mean(y);
  double acc = 0.0;
  for (std::size_t c = 0; c < mx.size(); ++c) {
    acc += (mx[c] - my[c]) * (mx[c] - my[c]);
  }
  return std::sqrt(acc);
}

/**
 * Block sums of the reference kernel matrix after splitting the rows into a
 * reference part (M rows) and a test part (H rows):
 *
 *   total_offdiag = ref_offdiag + test_offdiag + 2 * cross
 *
 * ref_offdiag is recovered from that identity instead of being summed.
 */
struct KernelMatrixView {
  std::size_t ref_size = 0;
  std::size_t test_size = 0;
  double total_offdiag_sum = 0.0;
  double ref_offdiag_sum = 0.0;
  double cross_sum = 0.0;
  double test_offdiag_sum = 0.0;
  /// Per test row: sum over reference rows of k(ref_i, test_j).
  std::vector<double> cross_column_sums;
  /// H x H, symmetric, unit diagonal.
  std::vector<double> test_block;
  /// M x H, row-major; only filled when materialized.
  std::vector<double> cross_block;

  double test_kernel(std::size_t i, std::size_t j) const {
    return test_block[i * test_size + j];
  }

  /// Squared-MMD estimate for the reference part against the test rows
  /// [first, first + window).
  double window_statistic(std::size_t first, std::size_t window) const {
    double cross = 0.0;
    double test = 0.0;
    for (std::size_t i = first; i < first + window; ++i) {
      cross += cross_column_sums[i];
      for (std::size_t j = i + 1; j < first + window; ++j) {
        test += test_kernel(i, j);
      }
    }
    return mmd2_from_sums(ref_offdiag_sum, 2.0 * test, cross, ref_size,
                          window);
  }
};

/**
 * Computes the cross and test blocks for an explicit split of `full` into
 * reference rows and (ordered) test rows. Costs M*H + H*(H-1)/2 kernel calls;
 * the M x M block is never touched.
 */
template <class Kernel>
KernelMatrixView partition_sums(const Samples& full,
                                std::span<const std::size_t> ref_indices,
                                std::span<const std::size_t> test_indices,
                                const Kernel& k, double precomputed_total,
                                bool materialize = false) {
  const std::size_t n = full.size();
  for (std::size_t i : ref_indices) {
    if (i >= n) throw InputError("reference index out of range");
  }
  for (std::size_t i : test_indices) {
    if (i >= n) throw InputError("test index out of range");
  }
  KernelMatrixView view;
  view.ref_size = ref_indices.size();
  view.test_size = test_indices.size();
  view.total_offdiag_sum = precomputed_total;
  const std::size_t h = view.test_size;

  view.test_block.assign(h * h, 1.0);
  double test_half = 0.0;
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = i + 1; j < h; ++j) {
      const double v = k(full[test_indices[i]], full[test_indices[j]]);
      view.test_block[i * h + j] = v;
      view.test_block[j * h + i] = v;
      test_half += v;
    }
  }
  view.test_offdiag_sum = 2.0 * test_half;

  view.cross_column_sums.assign(h, 0.0);
  if (materialize) view.cross_block.assign(view.ref_size * h, 0.0);
  for (std::size_t r = 0; r < view.ref_size; ++r) {
    const Observation x = full[ref_indices[r]];
    for (std::size_t j = 0; j < h; ++j) {
      const double v = k(x, full[test_indices[j]]);
      view.cross_column_sums[j] += v;
      if (materialize) view.cross_block[r * h + j] = v;
    }
  }
  for (double c : view.cross_column_sums) view.cross_sum += c;

  view.ref_offdiag_sum =
      precomputed_total - view.test_offdiag_sum - 2.0 * view.cross_sum;
  return view;
}

/// As partition_sums, with the test rows taken to be the complement of
/// `ref_indices` in ascending order. Blocks are always materialized.
template <class Kernel>
KernelMatrixView partitioned_sums(const Samples& full,
                                  std::span<const std::size_t> ref_indices,
                                  const Kernel& k, double precomputed_total) {
  std::vector<char> in_ref(full.size(), 0);
  for (std::size_t i : ref_indices) {
    if (i >= full.size()) throw InputError("reference index out of range");
    if (in_ref[i]) throw InputError("duplicate reference index");
    in_ref[i] = 1;
  }
  std::vector<std::size_t> complement;
  for (std::size_t i = 0; i < full.size(); ++i) {
    if (!in_ref[i]) complement.push_back(i);
  }
  return partition_sums(full, ref_indices, complement, k, precomputed_total,
                        true);
}

/// Neumaier-compensated running sum.
class CompensatedSum {
 public:
  CompensatedSum() = default;
  explicit CompensatedSum(double v) : sum_(v) {}
  void add(double x) {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x)) {
      carry_ += (sum_ - t) + x;
    } else {
      carry_ += (x - t) + sum_;
    }
    sum_ = t;
  }
  double value() const { return sum_ + carry_; }

 private:
  double sum_ = 0.0;
  double carry_ = 0.0;
};

/**
 * Streaming squared-MMD between a fixed reference window and a sliding test
 * window of W observations.
 *
 * Holds the cached sums: the reference off-diagonal sum (computed once), the
 * per-slot cross sums, and the W x W test kernel block with its row sums.
 * Each update costs exactly M + (W - 1) kernel evaluations.
 */
template <class Kernel = RbfKernel>
class MmdStream {
 public:
  static constexpr std::uint64_t kRefreshInterval = 10000;

  /// `ref_offdiag` may be supplied when already known; otherwise it is
  /// computed here with M(M-1)/2 kernel calls.
  MmdStream(std::shared_ptr<const Samples> ref, Kernel kernel,
            std::size_t window, std::optional<double> ref_offdiag = {})
      : ref_(std::move(ref)), kernel_(std::move(kernel)), window_(window) {
    if (!ref_ || ref_->size() < 2 || window_ < 2) {
      throw InputError("streaming MMD needs M >= 2 and W >= 2");
    }
    ref_offdiag_ = ref_offdiag ? *ref_offdiag : offdiag_sum(*ref_, kernel_);
    slots_ = Samples(window_, ref_->dim());
  }

  /// Loads a full test window (oldest first) and rebuilds every cache.
  void fill(const Samples& window) {
    if (window.size() != window_) {
      throw InputError("initial test window must have exactly W rows");
    }
    if (window.dim() != ref_->dim()) {
      throw InputError("test window dimension differs from reference");
    }
    for (std::size_t s = 0; s < window_; ++s) {
      auto dst = slots_.row(s);
      auto src = window[s];
      std::copy(src.begin(), src.end(), dst.begin());
    }
    head_ = 0;
    column_cross_.assign(window_, 0.0);
    for (std::size_t s = 0; s < window_; ++s) {
      column_cross_[s] = column_sum(slots_[s]);
    }
    test_block_.assign(window_ * window_, 1.0);
    for (std::size_t i = 0; i < window_; ++i) {
      for (std::size_t j = i + 1; j < window_; ++j) {
        const double v = kernel_(slots_[i], slots_[j]);
        test_block_[i * window_ + j] = v;
        test_block_[j * window_ + i] = v;
      }
    }
    refresh();
    ready_ = true;
  }

  /// Evicts the oldest observation, appends `z`, returns the new statistic.
  double update(Observation z) {
    if (!ready_) throw StateError("streaming MMD used before fill()");
    if (z.size() != ref_->dim()) {
      throw InputError("observation dimension " + std::to_string(z.size()) +
                       " differs from reference dimension " +
                       std::to_string(ref_->dim()));
    }
    const std::size_t s = head_;
    auto dst = slots_.row(s);
    std::copy(z.begin(), z.end(), dst.begin());

    const double incoming_cross = column_sum(z);
    cross_.add(incoming_cross);
    cross_.add(-column_cross_[s]);
    column_cross_[s] = incoming_cross;

    double incoming_row = 0.0;
    for (std::size_t j = 0; j < window_; ++j) {
      if (j == s) continue;
      const double v = kernel_(slots_[s], slots_[j]);
      row_test_[j].add(v);
      row_test_[j].add(-test_block_[j * window_ + s]);
      test_block_[j * window_ + s] = v;
      test_block_[s * window_ + j] = v;
      incoming_row += v;
    }
    test_offdiag_.add(2.0 * incoming_row);
    test_offdiag_.add(-2.0 * row_test_[s].value());
    row_test_[s] = CompensatedSum(incoming_row);

    head_ = (head_ + 1) % window_;
    if (++updates_since_refresh_ >= kRefreshInterval) refresh();
    return statistic();
  }

  double statistic() const {
    if (!ready_) throw StateError("streaming MMD used before fill()");
    return mmd2_from_sums(ref_offdiag_, test_offdiag_.value(), cross_.value(),
                          ref_->size(), window_);
  }

  /// Re-sums the rolling totals from cached kernel values.
  void refresh() {
    cross_ = CompensatedSum();
    for (double c : column_cross_) cross_.add(c);
    row_test_.assign(window_, CompensatedSum());
    test_offdiag_ = CompensatedSum();
    for (std::size_t i = 0; i < window_; ++i) {
      for (std::size_t j = 0; j < window_; ++j) {
        if (i != j) row_test_[i].add(test_block_[i * window_ + j]);
      }
      test_offdiag_.add(row_test_[i].value());
    }
    updates_since_refresh_ = 0;
  }

  /// Current test window, oldest first.
  Samples window_contents() const {
    Samples out(ref_->dim());
    out.reserve(window_);
    for (std::size_t i = 0; i < window_; ++i) {
      out.push_back(slots_[(head_ + i) % window_]);
    }
    return out;
  }

  bool ready() const { return ready_; }
  std::size_t window_size() const { return window_; }
  std::size_t ref_size() const { return ref_->size(); }
  std::size_t dim() const { return ref_->dim(); }
  const Samples& reference() const { return *ref_; }
  double ref_offdiag_sum() const { return ref_offdiag_; }
  double cross_sum() const { return cross_.value(); }
  double test_offdiag_sum() const { return test_offdiag_.value(); }
  std::span<const double> column_cross_sums() const { return column_cross_; }
  std::vector<double> row_test_sums() const {
    std::vector<double> out;
    out.reserve(row_test_.size());
    for (const auto& r : row_test_) out.push_back(r.value());
    return out;
  }

 private:
  double column_sum(Observation y) const {
    double acc = 0.0;
    for (std::size_t i = 0; i < ref_->size(); ++i) acc += kernel_((*ref_)[i], y);
    return acc;
  }

  std::shared_ptr<const Samples> ref_;
  Kernel kernel_;
  std::size_t window_;
  double ref_offdiag_ = 0.0;
  Samples slots_;
  std::size_t head_ = 0;
  bool ready_ = false;
  CompensatedSum cross_;
  CompensatedSum test_offdiag_;
  std::vector<double> column_cross_;
  std::vector<CompensatedSum> row_test_;
  std::vector<double> test_block_;
  std::uint64_t updates_since_refresh_ = 0;
};

/// Builds a ready streaming cache from a reference and an initial window.
template <class Kernel>
MmdStream<Kernel> mmd_stream_init(const Samples& ref_window,
                                  const Samples& initial_test_window,
                                  Kernel kernel) {
  if (ref_window.size() < 2 || initial_test_window.size() < 2) {
    throw InputError("streaming MMD needs M >= 2 and W >= 2");
  }
  MmdStream<Kernel> stream(std::make_shared<const Samples>(ref_window),
                           std::move(kernel), initial_test_window.size());
  stream.fill(initial_test_window);
  return stream;
}

}  // namespace calm
