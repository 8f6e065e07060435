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
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "calm/core.hpp"
#include "calm/estimators.hpp"
#include "calm/kernel.hpp"
#include "calm/parallel.hpp"
#include "calm/rng.hpp"

namespace calm {

/// 1-based rank of the empirical quantile: ceil(level * n), with products
/// that land on an integer up to rounding error treated as that integer.
inline std::size_t upper_quantile_rank(std::size_t n, double level) {
  const double x = level * static_cast<double>(n);
  const double nearest = std::round(x);
  double rank = std::abs(x - nearest) <= 1e-9 * std::max(1.0, x)
                    ? nearest
                    : std::ceil(x);
  rank = std::clamp(rank, 1.0, static_cast<double>(n));
  return static_cast<std::size_t>(rank);
}

/**
 * The ceil(level * n)-th smallest sample (no interpolation). At most a
 * fraction (1 - level) of the samples strictly exceed the result.
 */
inline double empirical_upper_quantile(std::span<const double> samples,
                                       double level) {
  if (samples.empty()) {
    throw InputError("quantile of an empty sample");
  }
  if (!(level > 0.0 && level < 1.0)) {
    throw InputError("quantile level must lie in (0, 1)");
  }
  std::vector<double> sorted(samples.begin(), samples.end());
  const std::size_t k = upper_quantile_rank(sorted.size(), level);
  std::nth_element(sorted.begin(), sorted.begin() + (k - 1), sorted.end());
  return sorted[k - 1];
}

/// `count` distinct indices from [0, n) in draw order (partial Fisher-Yates).
inline std::vector<std::size_t> draw_without_replacement(std::size_t n,
                                                         std::size_t count,
                                                         RngStream& rng) {
  if (count > n) throw InputError("cannot draw more indices than available");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  for (std::size_t i = 0; i < count; ++i) {
    std::swap(perm[i], perm[i + rng.below(n - i)]);
  }
  perm.resize(count);
  return perm;
}

inline std::vector<std::size_t> draw_with_replacement(std::size_t n,
                                                      std::size_t count,
                                                      RngStream& rng) {
  std::vector<std::size_t> out(count);
  for (auto& i : out) i = rng.below(n);
  return out;
}

struct Split {
  std::vector<std::size_t> reference;  // ascending
  std::vector<std::size_t> holdout;    // draw order
};

/// Uniformly random partition of [0, n) into a reference part and an ordered
/// holdout of `holdout_size` indices.
inline Split split_without_replacement(std::size_t n, std::size_t holdout_size,
                                       RngStream& rng) {
  if (holdout_size < 2 || holdout_size >= n) {
    throw InputError("holdout size " + std::to_string(holdout_size) +
                     " must satisfy 2 <= size < " + std::to_string(n));
  }
  Split split;
  split.holdout = draw_without_replacement(n, holdout_size, rng);
  split.reference = complement_indices(n, split.holdout);
  return split;
}

enum class Algorithm { calm, time_invariant, lsdd_inc };

inline std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::calm:
      return "calm";
    case Algorithm::time_invariant:
      return "time-invariant";
    case Algorithm::lsdd_inc:
      return "lsdd-inc";
  }
  return "?";
}

inline Algorithm parse_algorithm(const std::string& s) {
  if (s == "calm") return Algorithm::calm;
  if (s == "time-invariant") return Algorithm::time_invariant;
  if (s == "lsdd-inc") return Algorithm::lsdd_inc;
  throw InputError("unknown algorithm '" + s + "'");
}

struct CalibrationConfig {
  std::size_t window = 0;
  double ert = 0.0;
  std::size_t bootstraps = 0;
  std::uint64_t seed = 0;
  std::string estimator = "mmd";
  KernelSpec kernel = KernelSpec::median();
  /// Monte Carlo draws for the LSDD-Inc step-6 expectations.
  std::size_t expectation_samples = 10000;
  /// Configuration fails if a survivor set drops below this size.
  std::size_t min_survivors = 50;
  /// Worker threads; results do not depend on it.
  std::size_t threads = 1;

  double alpha() const { return 1.0 / ert; }

  void validate() const {
    if (window < 2) throw InputError("window size must be at least 2");
    if (!(ert > static_cast<double>(window)) || !std::isfinite(ert)) {
      throw InputError("expected runtime must be finite and exceed W");
    }
    if (bootstraps == 0) throw InputError("bootstrap count must be positive");
  }

  /// Non-fatal problems with the configuration.
  std::vector<std::string> warnings() const {
    std::vector<std::string> out;
    const double survivors =
        static_cast<double>(bootstraps) *
        std::pow(1.0 - alpha(), static_cast<double>(window));
    if (survivors < 100.0) {
      out.push_back("only about " + std::to_string(survivors) +
                    " bootstraps survive to the final threshold; "
                    "increase the bootstrap count");
    }
    return out;
  }
};

/// Calibrated thresholds plus everything needed to operate a detector.
struct ThresholdSchedule {
  Algorithm algorithm = Algorithm::calm;
  CalibrationConfig config;
  std::size_t reference_size = 0;
  std::size_t dim = 0;
  /// h_W ... h_{2W-1} for calm; a single value otherwise.
  std::vector<double> thresholds;
  std::vector<std::size_t> ref_window_indices;
  std::vector<std::size_t> holdout_indices;
  std::vector<std::size_t> survivor_counts;
  std::vector<std::string> warnings;

  std::size_t window() const { return config.window; }
  std::size_t ref_window_size() const { return ref_window_indices.size(); }

  /// Threshold for the test `offset` steps after the first scheduled one;
  /// constant once the schedule is exhausted.
  double threshold_at(std::size_t offset) const {
    return thresholds[std::min(offset, thresholds.size() - 1)];
  }

  /// Throws InputError when this schedule cannot be used with `ref`.
  void validate_against(const Samples& ref) const {
    if (ref.size() != reference_size) {
      throw InputError("reference set has " + std::to_string(ref.size()) +
                       " rows, schedule expects " +
                       std::to_string(reference_size));
    }
    if (ref.dim() != dim) {
      throw InputError("reference dimension " + std::to_string(ref.dim()) +
                       " differs from schedule dimension " +
                       std::to_string(dim));
    }
    if (thresholds.empty()) throw InputError("schedule has no thresholds");
    std::vector<char> seen(reference_size, 0);
    auto check = [&](const std::vector<std::size_t>& idx) {
      for (std::size_t i : idx) {
        if (i >= reference_size) {
          throw InputError("schedule index " + std::to_string(i) +
                           " out of range");
        }
        if (seen[i]) throw InputError("schedule indices are not distinct");
        seen[i] = 1;
      }
    };
    check(ref_window_indices);
    check(holdout_indices);
  }
};

struct CalmThresholds {
  std::vector<double> thresholds;
  std::vector<std::size_t> survivor_counts;
};

/**
 * Sequential conditional quantiles over a B x W table of bootstrap
 * statistics (row b, column t - W). Step t uses only the rows that stayed at
 * or below every earlier threshold.
 */
inline CalmThresholds calm_thresholds_from_table(std::span<const double> table,
                                                 std::size_t bootstraps,
                                                 std::size_t window,
                                                 double alpha,
                                                 std::size_t min_survivors = 1) {
  if (table.size() != bootstraps * window) {
    throw InputError("statistics table has the wrong shape");
  }
  CalmThresholds out;
  std::vector<std::size_t> alive(bootstraps);
  std::iota(alive.begin(), alive.end(), std::size_t{0});
  std::vector<double> column;
  for (std::size_t t = 0; t < window; ++t) {
    if (alive.empty()) {
      throw ConfigError("no bootstrap trajectories survive to step " +
                        std::to_string(t) + "; increase the bootstrap count");
    }
    if (alive.size() < min_survivors) {
      throw ConfigError("only " + std::to_string(alive.size()) +
                        " bootstrap trajectories survive to step " +
                        std::to_string(t) + " (minimum " +
                        std::to_string(min_survivors) +
                        "); increase the bootstrap count");
    }
    out.survivor_counts.push_back(alive.size());
    column.clear();
    for (std::size_t b : alive) column.push_back(table[b * window + t]);
    const double h = empirical_upper_quantile(column, 1.0 - alpha);
    out.thresholds.push_back(h);
    std::erase_if(alive, [&](std::size_t b) { return !(table[b * window + t] <= h); });
  }
  return out;
}

namespace detail {

inline void check_reference(const Samples& ref) {
  if (!ref.all_finite()) throw InputError("reference set has non-finite values");
}

inline ThresholdSchedule make_schedule(Algorithm algorithm, const Samples& ref,
                                       const CalibrationConfig& cfg) {
  ThresholdSchedule s;
  s.algorithm = algorithm;
  s.config = cfg;
  s.reference_size = ref.size();
  s.dim = ref.dim();
  s.warnings = cfg.warnings();
  return s;
}

}  // namespace detail

/**
 * Time-varying thresholds h_W..h_{2W-1}: each bootstrap holds out a mini
 * stream of 2W-1 points, the remaining M = N-2W+1 points form its reference
 * window, and thresholds are conditional quantiles over the surviving
 * trajectories. The operational reference window is one extra split drawn on
 * stream key 0.
 */
template <TwoSampleEstimator Estimator>
ThresholdSchedule configure_calm(const Samples& ref,
                                 const CalibrationConfig& cfg,
                                 const Estimator& estimator) {
  cfg.validate();
  detail::check_reference(ref);
  const std::size_t n = ref.size();
  const std::size_t w = cfg.window;
  const std::size_t holdout = 2 * w - 1;
  if (n < holdout + 2) {
    throw InputError("reference set too small: need N - 2W + 1 >= 2");
  }
  const std::size_t b_count = cfg.bootstraps;
  const auto prepared = estimator.prepare(ref);
  std::vector<double> table(b_count * w);
  parallel_for(b_count, cfg.threads, [&](std::size_t b) {
    RngStream rng(cfg.seed, b + 1, StreamDomain::bootstrap);
    const auto split = split_without_replacement(n, holdout, rng);
    prepared.window_statistics(
        split.holdout, w, std::span<double>(table).subspan(b * w, w));
  });
  auto result = calm_thresholds_from_table(table, b_count, w, cfg.alpha(),
                                           cfg.min_survivors);

  auto schedule = detail::make_schedule(Algorithm::calm, ref, cfg);
  schedule.thresholds = std::move(result.thresholds);
  schedule.survivor_counts = std::move(result.survivor_counts);
  RngStream rng(cfg.seed, 0, StreamDomain::bootstrap);
  auto split = split_without_replacement(n, holdout, rng);
  schedule.ref_window_indices = std::move(split.reference);
  schedule.holdout_indices = std::move(split.holdout);
  return schedule;
}

/// Single threshold from B disjoint (N-W, W) partitions.
template <TwoSampleEstimator Estimator>
ThresholdSchedule configure_time_invariant(const Samples& ref,
                                           const CalibrationConfig& cfg,
                                           const Estimator& estimator) {
  cfg.validate();
  detail::check_reference(ref);
  const std::size_t n = ref.size();
  const std::size_t w = cfg.window;
  if (n < 2 * w) throw InputError("reference set too small: need N >= 2W");
  const auto prepared = estimator.prepare(ref);
  std::vector<double> stats(cfg.bootstraps);
  parallel_for(cfg.bootstraps, cfg.threads, [&](std::size_t b) {
    RngStream rng(cfg.seed, b + 1, StreamDomain::bootstrap);
    const auto split = split_without_replacement(n, w, rng);
    prepared.window_statistics(split.holdout, w,
                               std::span<double>(stats).subspan(b, 1));
  });

  auto schedule = detail::make_schedule(Algorithm::time_invariant, ref, cfg);
  schedule.thresholds = {empirical_upper_quantile(stats, 1.0 - cfg.alpha())};
  schedule.survivor_counts = {cfg.bootstraps};
  RngStream rng(cfg.seed, 0, StreamDomain::bootstrap);
  auto split = split_without_replacement(n, w, rng);
  schedule.ref_window_indices = std::move(split.reference);
  schedule.holdout_indices = std::move(split.holdout);
  return schedule;
}

/// Shifts a (W, W) quantile onto the (N, W) scale by the difference of means.
inline double lsdd_inc_threshold(double quantile_ww, double mean_nw,
                                 double mean_ww) {
  return mean_nw + (quantile_ww - mean_ww);
}

/**
 * Baseline threshold: quantile of statistics between two size-W windows
 * drawn with replacement, shifted by Monte Carlo estimates of the
 * statistic's mean at (N, W) and (W, W). The detector then uses the whole
 * reference set as its reference window.
 */
template <TwoSampleEstimator Estimator>
ThresholdSchedule configure_lsdd_inc_baseline(const Samples& ref,
                                              const CalibrationConfig& cfg,
                                              const Estimator& estimator) {
  cfg.validate();
  detail::check_reference(ref);
  const std::size_t n = ref.size();
  const std::size_t w = cfg.window;
  if (n < 2 * w) throw InputError("reference set too small: need N >= 2W");
  if (cfg.expectation_samples == 0) {
    throw InputError("expectation sample count must be positive");
  }

  std::vector<double> stats(cfg.bootstraps);
  parallel_for(cfg.bootstraps, cfg.threads, [&](std::size_t b) {
    RngStream rng(cfg.seed, b + 1, StreamDomain::bootstrap);
    const auto x = ref.select(draw_with_replacement(n, w, rng));
    const auto y = ref.select(draw_with_replacement(n, w, rng));
    stats[b] = estimator.batch(x, y);
  });
  const double quantile_ww = empirical_upper_quantile(stats, 1.0 - cfg.alpha());

  const auto prepared = estimator.prepare(ref);
  const std::size_t e_count = cfg.expectation_samples;
  std::vector<double> nw(e_count), ww(e_count);
  parallel_for(e_count, cfg.threads, [&](std::size_t e) {
    RngStream rng_nw(cfg.seed, 2 * e, StreamDomain::expectation);
    const auto split = split_without_replacement(n, w, rng_nw);
    prepared.window_statistics(split.holdout, w,
                               std::span<double>(nw).subspan(e, 1));
    RngStream rng_ww(cfg.seed, 2 * e + 1, StreamDomain::expectation);
    const auto idx = draw_without_replacement(n, 2 * w, rng_ww);
    const std::span<const std::size_t> all(idx);
    ww[e] = estimator.batch(ref.select(all.first(w)), ref.select(all.last(w)));
  });
  const double mean_nw =
      std::accumulate(nw.begin(), nw.end(), 0.0) / static_cast<double>(e_count);
  const double mean_ww =
      std::accumulate(ww.begin(), ww.end(), 0.0) / static_cast<double>(e_count);

  auto schedule = detail::make_schedule(Algorithm::lsdd_inc, ref, cfg);
  schedule.thresholds = {lsdd_inc_threshold(quantile_ww, mean_nw, mean_ww)};
  schedule.survivor_counts = {cfg.bootstraps};
  schedule.ref_window_indices.resize(n);
  std::iota(schedule.ref_window_indices.begin(),
            schedule.ref_window_indices.end(), std::size_t{0});
  return schedule;
}

/**
 * Resolves the kernel bandwidth on `ref`, builds the named estimator and
 * runs the chosen algorithm.
 */
inline ThresholdSchedule configure(Algorithm algorithm, const Samples& ref,
                                   CalibrationConfig cfg) {
  if (cfg.estimator == "mmd") cfg.kernel = resolve_kernel(cfg.kernel, ref);
  const auto estimator = make_estimator(cfg.estimator, cfg.kernel);
  return std::visit(
      [&](const auto& est) {
        switch (algorithm) {
          case Algorithm::calm:
            return configure_calm(ref, cfg, est);
          case Algorithm::time_invariant:
            return configure_time_invariant(ref, cfg, est);
          case Algorithm::lsdd_inc:
            return configure_lsdd_inc_baseline(ref, cfg, est);
        }
        throw InputError("unknown algorithm");
      },
      estimator);
}

}  // namespace calm
