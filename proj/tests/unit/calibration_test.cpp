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

#include "calm/calibration.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <random>
#include <set>

#include "gtest/gtest.h"
#include "stubs.hpp"

namespace calm {
namespace {

Samples gaussian(std::size_t n, std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  Samples s(n, d);
  for (std::size_t i = 0; i < n; ++i)
    for (double& v : s.row(i)) v = nd(rng);
  return s;
}

TEST(EmpiricalUpperQuantile, OrderStatisticExamples) {
  const std::vector<double> ten = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  EXPECT_EQ(empirical_upper_quantile(ten, 0.9), 9.0);
  EXPECT_EQ(empirical_upper_quantile(std::vector<double>{7.0}, 0.3), 7.0);
  EXPECT_EQ(empirical_upper_quantile(std::vector<double>{7.0}, 0.99), 7.0);
  EXPECT_EQ(empirical_upper_quantile(std::vector<double>{3, 1, 2}, 0.5), 2.0);
  EXPECT_EQ(empirical_upper_quantile(std::vector<double>{0.1, 0.2, 0.3, 0.4}, 0.5),
            0.2);
}

TEST(EmpiricalUpperQuantile, RejectsBadInput) {
  EXPECT_THROW(empirical_upper_quantile(std::vector<double>{}, 0.5), InputError);
  EXPECT_THROW(empirical_upper_quantile(std::vector<double>{1.0}, 1.0), InputError);
  EXPECT_THROW(empirical_upper_quantile(std::vector<double>{1.0}, 0.0), InputError);
}

TEST(EmpiricalUpperQuantile, RankToleratesRoundingInLevel) {
  EXPECT_EQ(upper_quantile_rank(100, 1.0 - 1.0 / 100.0), 99u);
  EXPECT_EQ(upper_quantile_rank(1000, 1.0 - 1.0 / 128.0), 993u);
  EXPECT_EQ(upper_quantile_rank(10, 0.9), 9u);
}

TEST(EmpiricalUpperQuantile, ExceedanceFractionAtMostAlpha) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> n_dist(1, 300);
  std::uniform_real_distribution<double> level_dist(0.01, 0.99);
  std::uniform_int_distribution<int> value_dist(0, 20);  // many ties
  for (int trial = 0; trial < 500; ++trial) {
    const int n = n_dist(rng);
    const double level = level_dist(rng);
    std::vector<double> xs(n);
    for (double& x : xs) x = value_dist(rng);
    const double q = empirical_upper_quantile(xs, level);
    const auto exceed = std::count_if(xs.begin(), xs.end(), [&](double x) { return x > q; });
    EXPECT_LE(static_cast<double>(exceed), (1.0 - level) * n + 1e-9);
    EXPECT_NE(std::find(xs.begin(), xs.end(), q), xs.end());
  }
}

TEST(SplitWithoutReplacement, IsAPartition) {
  RngStream rng(5, 1);
  const auto split = split_without_replacement(5, 2, rng);
  EXPECT_EQ(split.holdout.size(), 2u);
  EXPECT_EQ(split.reference.size(), 3u);
  std::set<std::size_t> all(split.reference.begin(), split.reference.end());
  all.insert(split.holdout.begin(), split.holdout.end());
  EXPECT_EQ(all, (std::set<std::size_t>{0, 1, 2, 3, 4}));
  EXPECT_TRUE(std::is_sorted(split.reference.begin(), split.reference.end()));
}

TEST(SplitWithoutReplacement, DeterministicForFixedSeed) {
  RngStream a(42, 7), b(42, 7);
  const auto s1 = split_without_replacement(50, 9, a);
  const auto s2 = split_without_replacement(50, 9, b);
  EXPECT_EQ(s1.holdout, s2.holdout);
  EXPECT_EQ(s1.reference, s2.reference);
}

TEST(SplitWithoutReplacement, UniformInclusionFrequency) {
  std::vector<int> hits(5, 0);
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) {
    RngStream rng(3, static_cast<std::uint64_t>(i));
    for (std::size_t h : split_without_replacement(5, 2, rng).holdout) ++hits[h];
  }
  for (int h : hits) EXPECT_NEAR(static_cast<double>(h) / draws, 0.4, 0.01);
}

TEST(SplitWithoutReplacement, RejectsBadHoldoutSize) {
  RngStream rng(1, 1);
  EXPECT_THROW(split_without_replacement(5, 1, rng), InputError);
  EXPECT_THROW(split_without_replacement(5, 5, rng), InputError);
}

TEST(CalmThresholdsFromTable, HandTrace) {
  // rows b = 1..4, columns t = 2, 3 (W = 2, alpha = 0.5)
  const std::vector<double> table = {1, 5,  //
                                     2, 0,  //
                                     3, 9,  //
                                     4, 9};
  const auto r = calm_thresholds_from_table(table, 4, 2, 0.5);
  EXPECT_EQ(r.thresholds, (std::vector<double>{2.0, 0.0}));
  EXPECT_EQ(r.survivor_counts, (std::vector<std::size_t>{4, 2}));
}

TEST(CalmThresholdsFromTable, QuantileContractAndSurvivorRecursion) {
  std::mt19937_64 rng(77);
  std::uniform_int_distribution<int> v(0, 30);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t b = 400, w = 6;
    const double alpha = 0.05 + 0.02 * (trial % 5);
    std::vector<double> table(b * w);
    for (double& x : table) x = v(rng);
    const auto r = calm_thresholds_from_table(table, b, w, alpha);
    std::vector<std::size_t> alive(b);
    std::iota(alive.begin(), alive.end(), std::size_t{0});
    for (std::size_t t = 0; t < w; ++t) {
      ASSERT_EQ(r.survivor_counts[t], alive.size());
      std::size_t exceed = 0;
      std::vector<std::size_t> next;
      for (std::size_t i : alive) {
        if (table[i * w + t] > r.thresholds[t]) {
          ++exceed;
        } else {
          next.push_back(i);
        }
      }
      EXPECT_LE(static_cast<double>(exceed), alpha * alive.size() + 1e-9);
      alive = next;
      if (t + 1 < w) {
        EXPECT_EQ(r.survivor_counts[t + 1], r.survivor_counts[t] - exceed);
      }
    }
  }
}

TEST(CalmThresholdsFromTable, EmptySurvivorSetIsConfigError) {
  // with alpha = 0.5 and a single bootstrap, the sole trajectory survives
  // step one only if it does not exceed; force exceedance via NaN.
  const std::vector<double> table = {std::nan(""), 1.0};
  EXPECT_THROW(calm_thresholds_from_table(table, 1, 2, 0.5), ConfigError);
}

TEST(CalmThresholdsFromTable, SurvivorFloorIsEnforced) {
  std::vector<double> table(40 * 3);
  std::iota(table.begin(), table.end(), 0.0);
  EXPECT_THROW(calm_thresholds_from_table(table, 40, 3, 0.1, 50), ConfigError);
  EXPECT_NO_THROW(calm_thresholds_from_table(table, 40, 3, 0.1, 1));
}

TEST(ConfigureCalm, ConstantEstimatorGivesConstantSchedule) {
  const auto ref = gaussian(40, 2, 1);
  CalibrationConfig cfg{.window = 4, .ert = 20, .bootstraps = 200, .seed = 3};
  const auto s = configure_calm(ref, cfg, stubs::ConstantEstimator(0.25));
  EXPECT_EQ(s.thresholds, std::vector<double>(4, 0.25));
  EXPECT_EQ(s.survivor_counts, std::vector<std::size_t>(4, 200));
  EXPECT_EQ(s.ref_window_indices.size(), 40u - 7u);
  EXPECT_EQ(s.holdout_indices.size(), 7u);
}

TEST(ConfigureCalm, OperationalWindowIsDisjointFromHoldout) {
  const auto ref = gaussian(60, 2, 2);
  CalibrationConfig cfg{.window = 5, .ert = 30, .bootstraps = 300, .seed = 9,
                        .kernel = KernelSpec::fixed(1.0)};
  const auto s = configure(Algorithm::calm, ref, cfg);
  std::set<std::size_t> seen;
  for (auto i : s.ref_window_indices) EXPECT_TRUE(seen.insert(i).second);
  for (auto i : s.holdout_indices) EXPECT_TRUE(seen.insert(i).second);
  EXPECT_EQ(seen.size(), 60u);
  EXPECT_NO_THROW(s.validate_against(ref));
}

TEST(ConfigureCalm, DeterministicAcrossThreadCounts) {
  const auto ref = gaussian(80, 3, 4);
  CalibrationConfig cfg{.window = 5, .ert = 40, .bootstraps = 1000, .seed = 11};
  const auto one = configure(Algorithm::calm, ref, cfg);
  cfg.threads = 4;
  const auto four = configure(Algorithm::calm, ref, cfg);
  EXPECT_EQ(one.thresholds, four.thresholds);
  EXPECT_EQ(one.survivor_counts, four.survivor_counts);
  EXPECT_EQ(one.ref_window_indices, four.ref_window_indices);
  EXPECT_EQ(one.holdout_indices, four.holdout_indices);
}

TEST(ConfigureCalm, SurvivorsDecayGeometrically) {
  const auto ref = gaussian(500, 1, 5);
  CalibrationConfig cfg{.window = 10, .ert = 50, .bootstraps = 20000, .seed = 6};
  const auto s = configure(Algorithm::calm, ref, cfg);
  ASSERT_EQ(s.survivor_counts.size(), 10u);
  const double expected = std::pow(1.0 - 1.0 / 50.0, 9.0);
  const double ratio = static_cast<double>(s.survivor_counts.back()) / 20000.0;
  EXPECT_GT(ratio, expected * 0.9);
  EXPECT_LT(ratio, expected * 1.1);
  for (std::size_t t = 1; t < s.survivor_counts.size(); ++t) {
    EXPECT_LE(s.survivor_counts[t], s.survivor_counts[t - 1]);
  }
}

TEST(ConfigureCalm, KernelEvaluationsStayLinearPerBootstrap) {
  const std::size_t n = 120, w = 5, b = 300;
  const auto ref = gaussian(n, 2, 8);
  std::atomic<std::uint64_t> calls{0};
  MmdEstimator<CountingKernel<RbfKernel>> est(
      CountingKernel<RbfKernel>(RbfKernel(1.0), calls));
  CalibrationConfig cfg{.window = w, .ert = 50, .bootstraps = b, .seed = 1};
  configure_calm(ref, cfg, est);
  const std::uint64_t m = n - (2 * w - 1), h = 2 * w - 1;
  EXPECT_EQ(calls.load(), n * (n - 1) / 2 + b * (m * h + h * (h - 1) / 2));
  EXPECT_LE(calls.load(), n * n + b * n * (2 * w - 1));
}

TEST(ConfigureCalm, RejectsTooSmallReference) {
  const auto ref = gaussian(10, 1, 1);
  CalibrationConfig cfg{.window = 5, .ert = 30, .bootstraps = 100, .seed = 1,
                        .kernel = KernelSpec::fixed(1.0)};
  EXPECT_THROW(configure(Algorithm::calm, ref, cfg), InputError);
}

TEST(ConfigureCalm, TooFewBootstrapsFailsWithConfigError) {
  const auto ref = gaussian(100, 1, 1);
  CalibrationConfig cfg{.window = 5, .ert = 6, .bootstraps = 60, .seed = 1,
                        .kernel = KernelSpec::fixed(1.0)};
  EXPECT_THROW(configure(Algorithm::calm, ref, cfg), ConfigError);
}

TEST(CalibrationConfig, ValidatesAndWarns) {
  CalibrationConfig cfg{.window = 10, .ert = 10, .bootstraps = 100};
  EXPECT_THROW(cfg.validate(), InputError);
  cfg.ert = 100;
  EXPECT_NO_THROW(cfg.validate());
  EXPECT_FALSE(cfg.warnings().empty());  // 100 * 0.99^10 < 100
  cfg.bootstraps = 20000;
  EXPECT_TRUE(cfg.warnings().empty());
  cfg.window = 1;
  EXPECT_THROW(cfg.validate(), InputError);
}

TEST(ConfigureTimeInvariant, ConstantEstimator) {
  const auto ref = gaussian(30, 1, 2);
  CalibrationConfig cfg{.window = 5, .ert = 20, .bootstraps = 50, .seed = 4};
  const auto s = configure_time_invariant(ref, cfg, stubs::ConstantEstimator(-0.5));
  EXPECT_EQ(s.thresholds, std::vector<double>{-0.5});
  EXPECT_EQ(s.ref_window_indices.size(), 25u);
  EXPECT_EQ(s.holdout_indices.size(), 5u);
}

TEST(ConfigureTimeInvariant, FirstTestFalsePositiveRateMatchesAlpha) {
  // averaged over reference sets: for a single frozen reference the
  // exceedance probability scatters around alpha
  const std::size_t n = 200, w = 10, configs = 40, trials = 250;
  std::mt19937_64 rng(23);
  std::normal_distribution<double> nd;
  int exceed = 0;
  double alpha = 0.0;
  for (std::size_t c = 0; c < configs; ++c) {
    const auto ref = gaussian(n, 1, 100 + c);
    CalibrationConfig cfg{.window = w, .ert = 20, .bootstraps = 2000, .seed = c,
                          .estimator = "mean-diff"};
    alpha = cfg.alpha();
    const auto s = configure(Algorithm::time_invariant, ref, cfg);
    const auto window = ref.select(s.ref_window_indices);
    for (std::size_t i = 0; i < trials; ++i) {
      Samples y(w, 1);
      for (std::size_t j = 0; j < w; ++j) y.row(j)[0] = nd(rng);
      if (mean_difference_statistic(window, y) > s.thresholds[0]) ++exceed;
    }
  }
  const double total = static_cast<double>(configs * trials);
  // 4 binomial standard errors, widened for between-reference spread
  EXPECT_NEAR(exceed / total, alpha, 4.0 * std::sqrt(alpha * (1 - alpha) / total) + 0.005);
}

TEST(LsddIncBaseline, ShiftsQuantileByMeanGap) {
  EXPECT_DOUBLE_EQ(lsdd_inc_threshold(0.9, 0.1, 0.3), 0.7);
  EXPECT_DOUBLE_EQ(lsdd_inc_threshold(2.0, 0.0, 0.0), 2.0);
}

TEST(LsddIncBaseline, ConstantEstimatorShiftVanishes) {
  const auto ref = gaussian(30, 1, 3);
  CalibrationConfig cfg{.window = 5, .ert = 20, .bootstraps = 50, .seed = 4,
                        .expectation_samples = 100};
  const auto s = configure_lsdd_inc_baseline(ref, cfg, stubs::ConstantEstimator(1.75));
  EXPECT_EQ(s.thresholds, std::vector<double>{1.75});
  EXPECT_EQ(s.ref_window_indices.size(), 30u);
  EXPECT_TRUE(s.holdout_indices.empty());
}

TEST(LsddIncBaseline, ThresholdExceedsCalmFinalThreshold) {
  // the (W, W) quantile is far more diffuse than the (M, W) one
  const auto ref = gaussian(200, 2, 31);
  CalibrationConfig cfg{.window = 8, .ert = 50, .bootstraps = 4000, .seed = 32,
                        .expectation_samples = 2000};
  const auto base = configure(Algorithm::lsdd_inc, ref, cfg);
  const auto calm = configure(Algorithm::calm, ref, cfg);
  EXPECT_GT(base.thresholds[0], calm.thresholds.back());
}

}  // namespace
}  // namespace calm
