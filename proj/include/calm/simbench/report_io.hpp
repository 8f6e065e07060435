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

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "calm/calibration.hpp"
#include "calm/detector.hpp"
#include "calm/simbench/experiments.hpp"
#include "json.hpp"

namespace calm::simbench {

/// Shortest decimal form that round-trips a double.
inline std::string format_double(double v) {
  char buf[32];
  for (int precision = 15; precision <= 17; ++precision) {
    std::snprintf(buf, sizeof buf, "%.*g", precision, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

inline nlohmann::ordered_json report_to_json(const ExperimentReport& r) {
  const auto& p = r.params;
  nlohmann::ordered_json j;
  j["problem"] = to_string(p.problem);
  j["algorithm"] = calm::to_string(p.algorithm);
  j["mode"] = p.mode == StartMode::from_window ? "from-window" : "from-start";
  j["estimator"] = p.cfg.estimator;
  j["N"] = p.reference_size;
  j["W"] = p.cfg.window;
  j["B"] = p.cfg.bootstraps;
  j["ert"] = p.cfg.ert;
  j["seed"] = p.cfg.seed;
  j["configs"] = p.n_configs;
  j["runs_per_config"] = p.runs_per_config;
  j["runtime_unit"] = "tests";
  j["cap_tests"] = r.cap_tests;
  j["completed_runs"] = r.runtimes.size();
  j["timeouts"] = r.timeouts;
  j["art"] = r.art;
  j["censored_art"] = r.censored_art;
  j["miscalibration"] = r.miscalibration;
  j["ks_distance"] = r.ks_distance;
  if (p.power) {
    j["tau"] = p.cfg.window + 1;
    j["power_runs_detected_after_change"] = r.delays.size();
    j["false_alarms_before_change"] = r.false_alarms_before_change;
    j["power_timeouts"] = r.power_timeouts;
    j["add"] = r.add ? nlohmann::ordered_json(*r.add) : nullptr;
    j["reduction"] =
        r.reduction ? nlohmann::ordered_json(*r.reduction) : nullptr;
  }
  auto& configs = j["per_config"] = nlohmann::ordered_json::array();
  for (const auto& c : r.per_config) {
    nlohmann::ordered_json cj;
    cj["sigma"] = c.sigma;
    cj["thresholds"] = c.thresholds;
    cj["art"] = c.art;
    cj["completed_runs"] = c.runtimes.size();
    cj["timeouts"] = c.timeouts;
    if (p.power) {
      cj["add"] = c.delays.empty()
                      ? nlohmann::ordered_json(nullptr)
                      : nlohmann::ordered_json(mean_of<std::uint64_t>(c.delays));
      cj["false_alarms_before_change"] = c.false_alarms;
    }
    configs.push_back(std::move(cj));
  }
  return j;
}

/**
 * Writes report.json, runtimes.csv, qq.csv and hazard.csv into `dir`
 * (created if missing).
 */
inline void write_report(const ExperimentReport& r,
                         const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto open = [&](const char* name) {
    std::ofstream out(dir / name, std::ios::binary);
    if (!out) throw InputError("cannot write " + (dir / name).string());
    return out;
  };
  {
    auto out = open("report.json");
    out << report_to_json(r).dump(2) << '\n';
  }
  {
    auto out = open("runtimes.csv");
    out << "config,run,runtime\n";
    for (std::size_t c = 0; c < r.per_config.size(); ++c) {
      const auto& rt = r.per_config[c].runtimes;
      for (std::size_t i = 0; i < rt.size(); ++i) {
        out << c << ',' << i << ',' << rt[i] << '\n';
      }
    }
  }
  {
    auto out = open("qq.csv");
    out << "empirical,theoretical\n";
    for (const auto& q : r.qq) {
      out << format_double(q.empirical) << ',' << format_double(q.theoretical)
          << '\n';
    }
  }
  {
    auto out = open("hazard.csv");
    out << "t,at_risk,events,hazard,wilson99_lo,wilson99_hi\n";
    for (const auto& h : r.hazard) {
      out << h.t << ',' << h.at_risk << ',' << h.events << ','
          << format_double(h.hazard) << ',' << format_double(h.band.lo) << ','
          << format_double(h.band.hi) << '\n';
    }
  }
}

}  // namespace calm::simbench
