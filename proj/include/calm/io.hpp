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

#include <charconv>
#include <filesystem>
#include <fstream>
#include <istream>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "calm/core.hpp"
#include "json.hpp"

namespace calm::io {

/// Parses one line of comma-separated decimal floats. Blank lines give
/// nullopt.
inline std::optional<std::vector<double>> parse_csv_row(std::string_view line) {
  while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) {
    line.remove_suffix(1);
  }
  if (line.find_first_not_of(" \t") == std::string_view::npos) return {};
  std::vector<double> values;
  std::size_t pos = 0;
  for (;;) {
    const std::size_t comma = line.find(',', pos);
    std::string field(line.substr(pos, comma == std::string_view::npos
                                           ? std::string_view::npos
                                           : comma - pos));
    const auto first = field.find_first_not_of(" \t");
    const auto last = field.find_last_not_of(" \t");
    if (first == std::string::npos) throw InputError("empty CSV field");
    field = field.substr(first, last - first + 1);
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(field, &used);
    } catch (const std::exception&) {
      throw InputError("not a number: '" + field + "'");
    }
    if (used != field.size()) throw InputError("not a number: '" + field + "'");
    if (!std::isfinite(v)) throw InputError("non-finite value '" + field + "'");
    values.push_back(v);
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return values;
}

/// Headerless CSV, one observation per row, constant dimension.
inline Samples read_csv(std::istream& in, const std::string& name = "input") {
  Samples out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    try {
      if (auto row = parse_csv_row(line)) out.push_back(*row);
    } catch (const InputError& e) {
      throw InputError(name + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

inline Samples read_csv_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read " + path.string());
  return read_csv(in, path.string());
}

/// {"code", "message", "context"} as written to standard error.
inline std::string error_json(const std::string& code, const std::string& message,
                              const nlohmann::json& context = nlohmann::json::object()) {
  nlohmann::ordered_json j;
  j["code"] = code;
  j["message"] = message;
  j["context"] = context;
  return j.dump();
}

/**
 * JSON run configuration. Every key is optional; unknown keys are rejected
 * and relative paths resolve against the file's directory.
 */
struct RunConfigFile {
  std::optional<std::string> ref;
  std::optional<std::string> out;
  std::optional<std::string> schedule;
  std::optional<std::string> input;
  std::optional<std::size_t> window;
  std::optional<double> ert;
  std::optional<std::size_t> bootstraps;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> kernel;
  std::optional<std::string> sigma;
  std::optional<std::string> algorithm;
  std::optional<std::string> estimator;
  std::optional<std::string> mode;
  std::optional<std::uint64_t> max_steps;
  std::optional<std::size_t> threads;
  std::optional<std::size_t> expectation_samples;
  std::optional<std::size_t> max_attempts;
};

inline RunConfigFile load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw InputError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw InputError("config must be a JSON object");
  static const std::set<std::string> known = {
      "ref",     "out",       "schedule",  "input",     "window",
      "ert",     "bootstraps", "seed",     "kernel",    "sigma",
      "algorithm", "estimator", "mode",    "max_steps", "threads",
      "expectation_samples", "max_attempts"};
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw InputError("unknown config key '" + key + "'");
  }
  const auto base = path.parent_path();
  auto resolve = [&](const std::string& p) {
    if (p == "-") return p;
    const std::filesystem::path fp(p);
    return fp.is_absolute() ? p : (base / fp).lexically_normal().string();
  };
  RunConfigFile c;
  try {
    auto get = [&]<class T>(const char* key, std::optional<T>& dst) {
      if (j.contains(key)) dst = j.at(key).get<T>();
    };
    get("ref", c.ref);
    get("out", c.out);
    get("schedule", c.schedule);
    get("input", c.input);
    get("window", c.window);
    get("ert", c.ert);
    get("bootstraps", c.bootstraps);
    get("seed", c.seed);
    get("kernel", c.kernel);
    if (j.contains("sigma")) {
      c.sigma = j["sigma"].is_string() ? j["sigma"].get<std::string>()
                                        : j["sigma"].dump();
    }
    get("algorithm", c.algorithm);
    get("estimator", c.estimator);
    get("mode", c.mode);
    get("max_steps", c.max_steps);
    get("threads", c.threads);
    get("expectation_samples", c.expectation_samples);
    get("max_attempts", c.max_attempts);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("config has a value of the wrong type: ") + e.what());
  }
  for (auto* p : {&c.ref, &c.out, &c.schedule, &c.input}) {
    if (*p) **p = resolve(**p);
  }
  return c;
}

}  // namespace calm::io
