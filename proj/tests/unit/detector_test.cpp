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

#include "calm/detector.hpp"

#include <atomic>
#include <cmath>
#include <deque>
#include <limits>
#include <random>

#include "gtest/gtest.h"
#include "stubs.hpp"

namespace calm {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

using ConstDetector = Detector<stubs::ConstantStream>;
using LastDetector = Detector<stubs::LastValueStream>;

std::vector<double> obs(double v) { return {v}; }

Samples gaussian(std::size_t n, std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  Samples s(n, d);
  for (std::size_t i = 0; i < n; ++i)
    for (double& v : s.row(i)) v = nd(rng);
  return s;
}

TEST(Detector, NoStatisticBeforeWindowFills) {
  auto det = LastDetector::from_window({kInf, kInf, kInf},
                                       stubs::LastValueStream(3, 1));
  EXPECT_FALSE(det.step(obs(1)).tested());
  EXPECT_FALSE(det.step(obs(2)).tested());
  const auto third = det.step(obs(3));
  ASSERT_TRUE(third.tested());
  EXPECT_EQ(*third.statistic, 3.0);
  EXPECT_EQ(det.first_test_time(), 3u);
}

TEST(Detector, ThresholdPositionsFromWindow) {
  auto det = ConstDetector::from_window({10, 20, 30}, stubs::ConstantStream(0, 3, 1));
  EXPECT_EQ(det.threshold_for(3), 10);
  EXPECT_EQ(det.threshold_for(4), 20);
  EXPECT_EQ(det.threshold_for(5), 30);
  EXPECT_EQ(det.threshold_for(9), 30);
  EXPECT_EQ(det.threshold_for(1000), 30);
  std::vector<double> seen;
  for (int t = 1; t <= 9; ++t) {
    const auto o = det.step(obs(0));
    if (o.tested()) seen.push_back(*o.threshold);
  }
  EXPECT_EQ(seen, (std::vector<double>{10, 20, 30, 30, 30, 30, 30}));
}

TEST(Detector, SingleThresholdScheduleIsTimeInvariant) {
  auto det = ConstDetector::from_window({7}, stubs::ConstantStream(0, 3, 1));
  EXPECT_EQ(det.threshold_for(3), 7);
  EXPECT_EQ(det.threshold_for(5), 7);
  EXPECT_EQ(det.threshold_for(50), 7);
}

TEST(Detector, FromStartAcceptsOnFirstDrawAndShiftsPositions) {
  RngStream rng(1, 1, StreamDomain::prepend);
  const auto pool = Samples::from_scalars({1, 2, 3, 4, 5});
  auto det = ConstDetector::from_start({10, 20, 30}, stubs::ConstantStream(0, 3, 1),
                                       pool, rng);
  EXPECT_EQ(det.init_attempts(), 1u);
  EXPECT_EQ(det.first_test_time(), 1u);
  EXPECT_EQ(det.threshold_for(1), 20);
  EXPECT_EQ(det.threshold_for(2), 30);
  EXPECT_EQ(det.threshold_for(40), 30);
  const auto first = det.step(obs(0));
  ASSERT_TRUE(first.tested());
  EXPECT_EQ(*first.threshold, 20);
}

TEST(Detector, FromStartExhaustsAttempts) {
  RngStream rng(1, 1, StreamDomain::prepend);
  const auto pool = Samples::from_scalars({1, 2, 3, 4, 5});
  try {
    ConstDetector::from_start({1.0, 1.0, 1.0}, stubs::ConstantStream(5, 3, 1), pool,
                              rng, 1000);
    FAIL();
  } catch (const InitError& e) {
    EXPECT_EQ(e.attempts(), 1000u);
  }
  // a statistic equal to the first threshold is rejected too
  EXPECT_THROW(ConstDetector::from_start({1.0, 1.0, 1.0},
                                         stubs::ConstantStream(1.0, 3, 1), pool, rng, 5),
               InitError);
}

TEST(Detector, FromStartNeedsEnoughPoints) {
  RngStream rng(1, 1, StreamDomain::prepend);
  const auto pool = Samples::from_scalars({1, 2});
  EXPECT_THROW(ConstDetector::from_start({1, 1, 1}, stubs::ConstantStream(0, 3, 1),
                                         pool, rng),
               InputError);
}

TEST(Detector, StrictInequality) {
  auto det = ConstDetector::from_window({1.0, 1.0}, stubs::ConstantStream(1.0, 2, 1));
  for (int t = 0; t < 100; ++t) EXPECT_FALSE(det.step(obs(0)).detection);
  EXPECT_EQ(det.status(), DetectorStatus::running);
}

TEST(Detector, StepAfterDetectionIsStateError) {
  auto det = ConstDetector::from_window({0.5, 0.5}, stubs::ConstantStream(1.0, 2, 1));
  det.step(obs(0));
  EXPECT_TRUE(det.step(obs(0)).detection);
  EXPECT_EQ(det.status(), DetectorStatus::detected);
  EXPECT_THROW(det.step(obs(0)), StateError);
}

TEST(Detector, DimensionMismatchIsInputError) {
  auto det = ConstDetector::from_window({1.0}, stubs::ConstantStream(0, 2, 2));
  EXPECT_THROW(det.step(obs(0)), InputError);
}

TEST(Detector, NegativeInfinityScheduleDetectsAtFirstTest) {
  auto det = ConstDetector::from_window({-kInf, -kInf, -kInf},
                                        stubs::ConstantStream(0, 3, 1));
  std::vector<double> x{0.0};
  auto source = [&](std::vector<double>& out) {
    out = x;
    return true;
  };
  const auto r = run_to_detection(det, source, 100);
  ASSERT_TRUE(r.detected());
  EXPECT_EQ(r.event->t, 3u);
  EXPECT_EQ(r.event->tests, 1u);
}

TEST(Detector, PositiveInfinityScheduleNeverDetects) {
  auto det = ConstDetector::from_window({kInf, kInf}, stubs::ConstantStream(1e300, 2, 1));
  auto source = [](std::vector<double>& out) {
    out = {0.0};
    return true;
  };
  const auto r = run_to_detection(det, source, 500);
  EXPECT_FALSE(r.detected());
  EXPECT_EQ(r.steps, 500u);
}

TEST(Detector, ForcedPositionDetectsThere) {
  for (std::size_t pos = 0; pos < 4; ++pos) {
    std::vector<double> h(4, kInf);
    h[pos] = -kInf;
    auto det = ConstDetector::from_window(h, stubs::ConstantStream(0, 4, 1));
    auto source = [](std::vector<double>& out) {
      out = {0.0};
      return true;
    };
    const auto r = run_to_detection(det, source, 100);
    ASSERT_TRUE(r.detected());
    EXPECT_EQ(r.event->t, 4 + pos);
  }
}

TEST(Detector, SourceExhaustionEndsRun) {
  auto det = ConstDetector::from_window({kInf}, stubs::ConstantStream(0, 2, 1));
  int left = 7;
  auto source = [&](std::vector<double>& out) {
    out = {0.0};
    return left-- > 0;
  };
  const auto r = run_to_detection(det, source, 100);
  EXPECT_FALSE(r.detected());
  EXPECT_EQ(r.steps, 7u);
}

TEST(Detector, IidStatisticGivesGeometricRuntime) {
  // P(U > 0.9) = 0.1 per test, independent across tests
  const int runs = 20000;
  double total = 0.0;
  for (int run = 0; run < runs; ++run) {
    RngStream rng(99, static_cast<std::uint64_t>(run), StreamDomain::run);
    auto det = LastDetector::from_window({0.9, 0.9}, stubs::LastValueStream(2, 1));
    auto source = [&](std::vector<double>& out) {
      out = {rng.uniform(0.0, 1.0)};
      return true;
    };
    const auto r = run_to_detection(det, source, 100000);
    ASSERT_TRUE(r.detected());
    total += static_cast<double>(r.event->tests);
  }
  // mean 10, sd sqrt(90) / sqrt(runs) ~ 0.067
  EXPECT_NEAR(total / runs, 10.0, 0.3);
}

TEST(Detector, StreamingStatisticMatchesBatchReplay) {
  const auto ref = gaussian(60, 2, 7);
  CalibrationConfig cfg{.window = 5, .ert = 40, .bootstraps = 200, .seed = 8};
  const auto schedule = configure(Algorithm::calm, ref, cfg);
  auto det = detector_init_from_window(schedule, ref);
  const auto ref_window = ref.select(schedule.ref_window_indices);
  const RbfKernel kernel(*schedule.config.kernel.sigma);
  const auto stream = gaussian(40, 2, 9);
  std::deque<std::size_t> recent;
  for (std::size_t i = 0; i < stream.size(); ++i) {
    const auto o = det.step(stream[i]);
    recent.push_back(i);
    if (recent.size() > 5) recent.pop_front();
    if (!o.tested()) continue;
    const std::vector<std::size_t> idx(recent.begin(), recent.end());
    EXPECT_NEAR(*o.statistic, mmd2_batch(ref_window, stream.select(idx), kernel), 1e-10);
    if (o.detection) break;
  }
}

TEST(Detector, KernelEvaluationsPerStep) {
  const std::size_t m = 30, w = 6;
  auto ref = std::make_shared<const Samples>(gaussian(m, 2, 1));
  std::atomic<std::uint64_t> calls{0};
  MmdStream<CountingKernel<RbfKernel>> stream(
      ref, CountingKernel<RbfKernel>(RbfKernel(1.0), calls), w);
  auto det = Detector<decltype(stream)>::from_window({kInf}, std::move(stream));
  const auto data = gaussian(20, 2, 2);
  for (std::size_t i = 0; i < w; ++i) det.step(data[i]);
  for (std::size_t i = w; i < data.size(); ++i) {
    const auto before = calls.load();
    det.step(data[i]);
    EXPECT_EQ(calls.load() - before, m + w - 1);
  }
}

TEST(Detector, FromStartWithScheduleTestsFromFirstObservation) {
  const auto ref = gaussian(60, 2, 7);
  CalibrationConfig cfg{.window = 5, .ert = 40, .bootstraps = 200, .seed = 8};
  const auto schedule = configure(Algorithm::calm, ref, cfg);
  RngStream rng(8, 0, StreamDomain::prepend);
  auto det = detector_init_from_start(schedule, ref, rng);
  ASSERT_TRUE(det.initial_statistic().has_value());
  EXPECT_LT(*det.initial_statistic(), schedule.thresholds.front());
  const auto o = det.step(gaussian(1, 2, 3)[0]);
  EXPECT_TRUE(o.tested());
  EXPECT_EQ(*o.threshold, schedule.thresholds[1]);
}

TEST(Detector, FromStartRejectsScheduleWithoutHoldout) {
  const auto ref = gaussian(60, 2, 7);
  CalibrationConfig cfg{.window = 5, .ert = 40, .bootstraps = 200, .seed = 8,
                        .expectation_samples = 50};
  const auto schedule = configure(Algorithm::lsdd_inc, ref, cfg);
  RngStream rng(8, 0, StreamDomain::prepend);
  EXPECT_THROW(detector_init_from_start(schedule, ref, rng), InputError);
}

TEST(ParseStartMode, AcceptsBothSpellings) {
  EXPECT_EQ(parse_start_mode("from-window"), StartMode::from_window);
  EXPECT_EQ(parse_start_mode("from_start"), StartMode::from_start);
  EXPECT_THROW(parse_start_mode("whenever"), InputError);
}

}  // namespace
}  // namespace calm
