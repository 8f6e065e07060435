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

#include <fstream>
#include <string>

#include "calm/calibration.hpp"
#include "json.hpp"

namespace calm {

inline constexpr int kScheduleSchemaVersion = 1;

/// Indices are 0-based in the document.
inline nlohmann::ordered_json schedule_to_json(const ThresholdSchedule& s) {
  nlohmann::ordered_json j;
  j["schema_version"] = kScheduleSchemaVersion;
  j["algorithm"] = to_string(s.algorithm);
  j["estimator"] = s.config.estimator;
  j["kernel"] = {{"kind", "gaussian_rbf"},
                 {"sigma", s.config.kernel.sigma
                               ? nlohmann::ordered_json(*s.config.kernel.sigma)
                               : nlohmann::ordered_json(nullptr)}};
  j["N"] = s.reference_size;
  j["dim"] = s.dim;
  j["W"] = s.config.window;
  j["M"] = s.ref_window_size();
  j["alpha"] = s.config.alpha();
  j["ert"] = s.config.ert;
  j["B"] = s.config.bootstraps;
  j["seed"] = s.config.seed;
  j["ref_window_indices"] = s.ref_window_indices;
  j["holdout_indices"] = s.holdout_indices;
  j["thresholds"] = s.thresholds;
  j["survivor_counts"] = s.survivor_counts;
  return j;
}

inline ThresholdSchedule schedule_from_json(const nlohmann::json& j) {
  try {
    if (j.at("schema_version").get<int>() != kScheduleSchemaVersion) {
      throw InputError("unsupported schedule schema_version");
    }
    ThresholdSchedule s;
    s.algorithm = parse_algorithm(j.at("algorithm").get<std::string>());
    s.config.estimator = j.at("estimator").get<std::string>();
    const auto& kernel = j.at("kernel");
    if (kernel.at("kind").get<std::string>() != "gaussian_rbf") {
      throw InputError("unsupported kernel kind");
    }
    if (!kernel.at("sigma").is_null()) {
      s.config.kernel = KernelSpec::fixed(kernel.at("sigma").get<double>());
    }
    s.reference_size = j.at("N").get<std::size_t>();
    s.dim = j.at("dim").get<std::size_t>();
    s.config.window = j.at("W").get<std::size_t>();
    s.config.ert = j.at("ert").get<double>();
    s.config.bootstraps = j.at("B").get<std::size_t>();
    s.config.seed = j.at("seed").get<std::uint64_t>();
    s.ref_window_indices =
        j.at("ref_window_indices").get<std::vector<std::size_t>>();
    s.holdout_indices = j.at("holdout_indices").get<std::vector<std::size_t>>();
    s.thresholds = j.at("thresholds").get<std::vector<double>>();
    s.survivor_counts = j.at("survivor_counts").get<std::vector<std::size_t>>();
    if (j.at("M").get<std::size_t>() != s.ref_window_indices.size()) {
      throw InputError("schedule M does not match ref_window_indices");
    }
    if (s.thresholds.empty()) throw InputError("schedule has no thresholds");
    if (s.algorithm == Algorithm::calm &&
        s.thresholds.size() != s.config.window) {
      throw InputError("calm schedule must hold W thresholds");
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed schedule: ") + e.what());
  }
}

inline void save_schedule(const ThresholdSchedule& s, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write schedule to " + path);
  out << schedule_to_json(s).dump(2) << '\n';
}

inline ThresholdSchedule load_schedule(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read schedule " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw InputError("schedule " + path + " is not valid JSON: " + e.what());
  }
  return schedule_from_json(j);
}

}  // namespace calm
