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
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "calm/calibration.hpp"
#include "calm/detector.hpp"
#include "calm/parallel.hpp"
#include "calm/rng.hpp"
#include "calm/simbench/problems.hpp"
#include "calm/simbench/stats.hpp"

namespace calm::simbench {

struct ExperimentParams {
  Problem problem = Problem::d1;
  std::size_t reference_size = 500;
  /// Seed, window, ERT, bootstraps, estimator and kernel. The per-config
  /// calibration seeds are derived from cfg.seed.
  CalibrationConfig cfg;
  Algorithm algorithm = Algorithm::calm;
  StartMode mode = StartMode::from_window;
  std::size_t n_configs = 1;
  std::size_t runs_per_config = 1;
  bool power = false;
  /// Runs stop after W + timeout_factor * ERT observations.
  double timeout_factor = 100.0;
  /// Hazard estimates cover tests 1..hazard_horizon; 0 means 3W.
  std::uint64_t hazard_horizon = 0;
  /// Test hook applied to each calibrated schedule before it is operated.
  std::function<void(ThresholdSchedule&)> adjust_schedule;
};

struct ConfigSummary {
  double sigma = 0.0;
  std::vector<double> thresholds;
  std::vector<std::uint64_t> runtimes;
  std::size_t timeouts = 0;
  double art = 0.0;
  std::vector<std::uint64_t> delays;
  std::size_t false_alarms = 0;
  std::size_t power_timeouts = 0;
};

/**
 * Aggregated outcome of an experiment. Runtimes count the tests performed up
 * to the (false) detection, so a memoryless detector at rate 1/ERT has
 * runtimes ~ Geometric(1/ERT) on {1, 2, ...}.
 */
struct ExperimentReport {
  ExperimentParams params;
  std::vector<ConfigSummary> per_config;
  /// Completed no-change runtimes, config-major.
  std::vector<std::uint64_t> runtimes;
  std::size_t timeouts = 0;
  std::uint64_t cap_tests = 0;
  double art = 0.0;
  /// Mean with timed-out runs counted at the cap; a lower bound on the ART.
  double censored_art = 0.0;
  double miscalibration = 0.0;
  double ks_distance = 0.0;
  std::vector<QQPoint> qq;
  std::vector<HazardPoint> hazard;
  // Power runs: change at tau = W + 1, delay T - tau over runs with T >= tau.
  std::vector<std::uint64_t> delays;
  std::size_t false_alarms_before_change = 0;
  std::size_t power_timeouts = 0;
  std::optional<double> add;
  std::optional<double> reduction;
};

/// Recomputes the summary metrics from the stored runtimes and delays.
inline void summarize(ExperimentReport& r) {
  const double ert = r.params.cfg.ert;
  r.art = mean_of<std::uint64_t>(r.runtimes);
  double censored = 0.0;
  for (auto t : r.runtimes) censored += static_cast<double>(t);
  censored += static_cast<double>(r.timeouts) * static_cast<double>(r.cap_tests);
  const std::size_t total = r.runtimes.size() + r.timeouts;
  r.censored_art = total ? censored / static_cast<double>(total) : 0.0;
  r.miscalibration = std::abs(r.art - ert) / ert;
  r.qq.clear();
  r.ks_distance = 0.0;
  if (!r.runtimes.empty() && r.art > 1.0) {
    const double theta = 1.0 / r.art;
    r.ks_distance = ks_geometric(r.runtimes, theta);
    r.qq = geometric_qq(r.runtimes, theta);
  }
  const std::uint64_t horizon =
      r.params.hazard_horizon ? r.params.hazard_horizon : 3 * r.params.cfg.window;
  r.hazard = hazard_estimates(r.runtimes, horizon);
  r.add.reset();
  r.reduction.reset();
  if (r.params.power && !r.delays.empty()) {
    r.add = mean_of<std::uint64_t>(r.delays);
    if (r.art > 0.0) r.reduction = (r.art - *r.add) / r.art;
  }
}

/**
 * For each configuration: draws a fresh reference set from the problem's
 * pre-change law, calibrates, then simulates runs_per_config no-change runs
 * (and, with params.power, the same number of runs with a change at
 * tau = W + 1).
 */
inline ExperimentReport run_experiment(const ExperimentParams& params) {
  params.cfg.validate();
  if (params.n_configs == 0 || params.runs_per_config == 0) {
    throw InputError("experiment needs positive config and run counts");
  }
  if (params.power && params.mode != StartMode::from_window) {
    throw InputError("power runs use from_window mode");
  }
  ExperimentReport report;
  report.params = params;
  const std::uint64_t w = params.cfg.window;
  const std::uint64_t cap_tests = static_cast<std::uint64_t>(
      std::ceil(params.timeout_factor * params.cfg.ert));
  report.cap_tests = cap_tests;
  const std::uint64_t max_steps =
      cap_tests + (params.mode == StartMode::from_window ? w - 1 : 0);
  const std::size_t runs = params.runs_per_config;
  const std::uint64_t seed = params.cfg.seed;

  for (std::size_t c = 0; c < params.n_configs; ++c) {
    RngStream ref_rng(seed, c, StreamDomain::reference_set);
    const Samples ref = sample_problem(params.problem, Phase::pre,
                                       params.reference_size, ref_rng);
    CalibrationConfig cfg = params.cfg;
    cfg.seed = RngStream(seed, c, StreamDomain::config_seed)();
    auto schedule = configure(params.algorithm, ref, cfg);
    if (params.adjust_schedule) params.adjust_schedule(schedule);

    ConfigSummary summary;
    summary.sigma = schedule.config.kernel.sigma.value_or(0.0);
    summary.thresholds = schedule.thresholds;
    const AnyStream prototype = make_schedule_stream(schedule, ref);
    const Samples pool = ref.select(schedule.holdout_indices);

    auto make_detector = [&](std::uint64_t key) {
      if (params.mode == StartMode::from_window) {
        return Detector<AnyStream>::from_window(schedule.thresholds, prototype);
      }
      RngStream prepend(seed, key, StreamDomain::prepend);
      return Detector<AnyStream>::from_start(schedule.thresholds, prototype,
                                             pool, prepend);
    };

    std::vector<std::optional<std::uint64_t>> outcomes(runs);
    parallel_for(runs, params.cfg.threads, [&](std::size_t r) {
      const std::uint64_t key = c * runs + r;
      auto detector = make_detector(key);
      StreamSource source(
          StreamModel{{params.problem, Phase::pre}, {params.problem, Phase::pre}, {}},
          RngStream(seed, key, StreamDomain::run));
      const auto result = run_to_detection(detector, source, max_steps);
      if (result.event) outcomes[r] = result.event->tests;
    });
    for (const auto& o : outcomes) {
      if (o) {
        summary.runtimes.push_back(*o);
      } else {
        ++summary.timeouts;
      }
    }
    summary.art = mean_of<std::uint64_t>(summary.runtimes);

    if (params.power) {
      const std::uint64_t tau = w + 1;
      std::vector<std::optional<std::int64_t>> delays(runs);
      parallel_for(runs, params.cfg.threads, [&](std::size_t r) {
        const std::uint64_t key = c * runs + r;
        auto detector = make_detector(key);
        StreamSource source(StreamModel{{params.problem, Phase::pre},
                                        {params.problem, Phase::post},
                                        tau},
                            RngStream(seed, key, StreamDomain::power));
        const auto result = run_to_detection(detector, source, max_steps);
        if (result.event) {
          delays[r] = static_cast<std::int64_t>(result.event->runtime) -
                      static_cast<std::int64_t>(tau);
        }
      });
      for (const auto& d : delays) {
        if (!d) {
          ++summary.power_timeouts;
        } else if (*d < 0) {
          ++summary.false_alarms;
        } else {
          summary.delays.push_back(static_cast<std::uint64_t>(*d));
        }
      }
    }

    report.runtimes.insert(report.runtimes.end(), summary.runtimes.begin(),
                           summary.runtimes.end());
    report.timeouts += summary.timeouts;
    report.delays.insert(report.delays.end(), summary.delays.begin(),
                         summary.delays.end());
    report.false_alarms_before_change += summary.false_alarms;
    report.power_timeouts += summary.power_timeouts;
    report.per_config.push_back(std::move(summary));
  }
  summarize(report);
  return report;
}

inline ExperimentReport run_calibration_experiment(ExperimentParams params) {
  params.power = false;
  return run_experiment(params);
}

inline ExperimentReport run_power_experiment(ExperimentParams params) {
  params.power = true;
  params.mode = StartMode::from_window;
  return run_experiment(params);
}

}  // namespace calm::simbench
