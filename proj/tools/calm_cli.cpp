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

// calm: configure thresholds, monitor streams, run simulation studies.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "calm/calibration.hpp"
#include "calm/detector.hpp"
#include "calm/io.hpp"
#include "calm/schedule_io.hpp"
#include "calm/simbench/bias_study.hpp"
#include "calm/simbench/experiments.hpp"
#include "calm/simbench/report_io.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitTimeout = 2;
constexpr int kExitInput = 3;
constexpr int kExitNumerical = 4;

struct ConfigureArgs {
  std::string config;
  std::string ref;
  std::string out;
  std::size_t window = 0;
  double ert = 0.0;
  std::size_t bootstraps = 0;
  std::uint64_t seed = 0;
  std::string kernel = "rbf";
  std::string sigma = "median";
  std::string algorithm = "calm";
  std::string estimator = "mmd";
  std::size_t threads = 1;
  std::size_t expectation_samples = 10000;
};

struct RunArgs {
  std::string config;
  std::string schedule;
  std::string ref;
  std::string input = "-";
  std::string out = "-";
  std::string mode = "from-window";
  std::uint64_t max_steps = 0;
  std::optional<std::uint64_t> seed;
  std::size_t max_attempts = 1000;
};

struct SimulateArgs {
  std::string problem;
  std::vector<double> erts;
  std::size_t n = 500;
  std::size_t window = 10;
  std::size_t bootstraps = 20000;
  std::size_t configs = 10;
  std::size_t runs = 500;
  std::string power = "off";
  std::uint64_t seed = 0;
  std::string out;
  std::size_t threads = 1;
  std::string mode = "from-window";
  std::string algorithm = "calm";
  std::string estimator = "mmd";
  std::size_t expectation_samples = 10000;
  double timeout_factor = 100.0;
};

struct BiasArgs {
  std::vector<std::size_t> dims;
  std::string estimator = "mmd";
  std::uint64_t seed = 0;
  std::string out = "-";
  std::size_t n = 1000;
  std::size_t window = 25;
  std::size_t bootstraps = 25000;
  std::size_t threads = 1;
};

void report_error(const std::string& code, const std::string& message,
                  const nlohmann::json& context = nlohmann::json::object()) {
  std::cerr << calm::io::error_json(code, message, context) << '\n';
}

calm::KernelSpec parse_sigma(const std::string& s) {
  if (s == "median") return calm::KernelSpec::median();
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw calm::InputError("--sigma must be 'median' or a positive number");
  }
  if (used != s.size()) {
    throw calm::InputError("--sigma must be 'median' or a positive number");
  }
  return calm::KernelSpec::fixed(v);
}

// Values from the config file fill in options not given on the command line.
template <class T, class U>
void fill_from(const CLI::App& app, const char* flag, T& dst,
               const std::optional<U>& src) {
  if (src && app.count(flag) == 0) dst = static_cast<T>(*src);
}

int cmd_configure(const CLI::App& app, ConfigureArgs a) {
  if (!a.config.empty()) {
    const auto c = calm::io::load_run_config(a.config);
    fill_from(app, "--ref", a.ref, c.ref);
    fill_from(app, "--out", a.out, c.out);
    fill_from(app, "--window", a.window, c.window);
    fill_from(app, "--ert", a.ert, c.ert);
    fill_from(app, "--bootstraps", a.bootstraps, c.bootstraps);
    fill_from(app, "--seed", a.seed, c.seed);
    fill_from(app, "--kernel", a.kernel, c.kernel);
    fill_from(app, "--sigma", a.sigma, c.sigma);
    fill_from(app, "--algorithm", a.algorithm, c.algorithm);
    fill_from(app, "--estimator", a.estimator, c.estimator);
    fill_from(app, "--threads", a.threads, c.threads);
    fill_from(app, "--expectation-samples", a.expectation_samples,
              c.expectation_samples);
  }
  if (a.ref.empty() || a.out.empty() || a.window == 0 || a.ert == 0.0 ||
      a.bootstraps == 0) {
    std::cerr << app.help();
    throw calm::InputError(
        "--ref, --out, --window, --ert and --bootstraps are required");
  }
  if (a.kernel != "rbf") throw calm::InputError("only --kernel rbf is supported");

  const auto start = std::chrono::steady_clock::now();
  const auto ref = calm::io::read_csv_file(a.ref);
  calm::CalibrationConfig cfg;
  cfg.window = a.window;
  cfg.ert = a.ert;
  cfg.bootstraps = a.bootstraps;
  cfg.seed = a.seed;
  cfg.estimator = a.estimator;
  cfg.kernel = parse_sigma(a.sigma);
  cfg.threads = a.threads;
  cfg.expectation_samples = a.expectation_samples;
  const auto algorithm = calm::parse_algorithm(a.algorithm);
  for (const auto& w : cfg.warnings()) report_error("warning", w);
  const auto schedule = calm::configure(algorithm, ref, cfg);
  calm::save_schedule(schedule, a.out);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  std::ostringstream survivors;
  for (std::size_t i = 0; i < schedule.survivor_counts.size(); ++i) {
    survivors << (i ? "," : "") << schedule.survivor_counts[i];
  }
  std::printf("wrote %s: algorithm=%s N=%zu W=%zu M=%zu sigma=%.6g "
              "survivors=[%s] wall_time=%.2fs\n",
              a.out.c_str(), calm::to_string(algorithm).c_str(),
              schedule.reference_size, schedule.window(),
              schedule.ref_window_size(),
              schedule.config.kernel.sigma.value_or(0.0),
              survivors.str().c_str(), secs);
  return kExitOk;
}

nlohmann::ordered_json step_record(const calm::StepOutcome& o) {
  nlohmann::ordered_json j;
  j["t"] = o.t;
  j["stat"] = o.statistic ? nlohmann::ordered_json(*o.statistic)
                          : nlohmann::ordered_json(nullptr);
  j["threshold"] = o.threshold ? nlohmann::ordered_json(*o.threshold)
                               : nlohmann::ordered_json(nullptr);
  j["detection"] = o.detection;
  return j;
}

int cmd_run(const CLI::App& app, RunArgs a) {
  if (!a.config.empty()) {
    const auto c = calm::io::load_run_config(a.config);
    fill_from(app, "--schedule", a.schedule, c.schedule);
    fill_from(app, "--ref", a.ref, c.ref);
    fill_from(app, "--input", a.input, c.input);
    fill_from(app, "--out", a.out, c.out);
    fill_from(app, "--mode", a.mode, c.mode);
    fill_from(app, "--max-steps", a.max_steps, c.max_steps);
    fill_from(app, "--max-attempts", a.max_attempts, c.max_attempts);
    if (c.seed && app.count("--seed") == 0) a.seed = *c.seed;
  }
  if (a.schedule.empty() || a.ref.empty()) {
    std::cerr << app.help();
    throw calm::InputError("--schedule and --ref are required");
  }
  const auto schedule = calm::load_schedule(a.schedule);
  const auto ref = calm::io::read_csv_file(a.ref);
  schedule.validate_against(ref);
  const auto mode = calm::parse_start_mode(a.mode);

  std::optional<calm::Detector<calm::AnyStream>> detector;
  if (mode == calm::StartMode::from_window) {
    detector.emplace(calm::detector_init_from_window(schedule, ref));
  } else {
    calm::RngStream rng(a.seed.value_or(schedule.config.seed), 0,
                        calm::StreamDomain::prepend);
    detector.emplace(
        calm::detector_init_from_start(schedule, ref, rng, a.max_attempts));
  }

  std::ifstream in_file;
  std::istream* in = &std::cin;
  if (a.input != "-") {
    in_file.open(a.input);
    if (!in_file) throw calm::InputError("cannot read " + a.input);
    in = &in_file;
  }
  std::ofstream out_file;
  std::ostream* out = &std::cout;
  if (a.out != "-") {
    out_file.open(a.out, std::ios::binary);
    if (!out_file) throw calm::InputError("cannot write " + a.out);
    out = &out_file;
  }

  std::string line;
  std::size_t lineno = 0;
  std::uint64_t steps = 0;
  bool detected = false;
  while ((a.max_steps == 0 || steps < a.max_steps) && std::getline(*in, line)) {
    ++lineno;
    std::optional<std::vector<double>> row;
    try {
      row = calm::io::parse_csv_row(line);
    } catch (const calm::InputError& e) {
      throw calm::InputError(a.input + ":" + std::to_string(lineno) + ": " + e.what());
    }
    if (!row) continue;
    const auto outcome = detector->step(*row);
    ++steps;
    *out << step_record(outcome).dump() << '\n';
    out->flush();
    if (outcome.detection) {
      detected = true;
      break;
    }
  }

  nlohmann::ordered_json summary;
  summary["summary"] = true;
  summary["mode"] = mode == calm::StartMode::from_window ? "from-window" : "from-start";
  summary["steps"] = steps;
  if (detected) {
    const auto& e = *detector->event();
    summary["result"] = "detection";
    summary["T"] = e.runtime;
    summary["tests"] = e.tests;
    summary["stat"] = e.statistic;
    summary["threshold"] = e.threshold;
  } else {
    summary["result"] = "timeout";
    summary["T"] = nullptr;
  }
  if (mode == calm::StartMode::from_start) {
    summary["init_attempts"] = detector->init_attempts();
  }
  *out << summary.dump() << '\n';
  out->flush();
  return detected ? kExitOk : kExitTimeout;
}

std::string ert_label(double ert) {
  return calm::simbench::format_double(ert);
}

int cmd_simulate(const CLI::App&, const SimulateArgs& a) {
  if (a.power != "on" && a.power != "off") {
    throw calm::InputError("--power must be on or off");
  }
  if (a.erts.empty()) throw calm::InputError("--ert needs at least one value");
  const auto problem = calm::simbench::parse_problem(a.problem);
  for (double ert : a.erts) {
    calm::simbench::ExperimentParams p;
    p.problem = problem;
    p.reference_size = a.n;
    p.cfg.window = a.window;
    p.cfg.ert = ert;
    p.cfg.bootstraps = a.bootstraps;
    p.cfg.seed = a.seed;
    p.cfg.estimator = a.estimator;
    p.cfg.threads = a.threads;
    p.cfg.expectation_samples = a.expectation_samples;
    p.algorithm = calm::parse_algorithm(a.algorithm);
    p.mode = calm::parse_start_mode(a.mode);
    p.n_configs = a.configs;
    p.runs_per_config = a.runs;
    p.power = a.power == "on";
    p.timeout_factor = a.timeout_factor;
    const auto start = std::chrono::steady_clock::now();
    const auto report = calm::simbench::run_experiment(p);
    const auto dir = std::filesystem::path(a.out) /
                     (calm::simbench::to_string(problem) + "_ert" + ert_label(ert));
    calm::simbench::write_report(report, dir);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (report.timeouts > 0) {
      report_error("warning", "runs hit the timeout cap and were excluded",
                   {{"timeouts", report.timeouts}, {"cap_tests", report.cap_tests}});
    }
    std::printf("%s ert=%s: art=%.4f miscalibration=%.4f ks=%.4f timeouts=%zu",
                calm::simbench::to_string(problem).c_str(), ert_label(ert).c_str(),
                report.art, report.miscalibration, report.ks_distance,
                report.timeouts);
    if (report.reduction) {
      std::printf(" add=%.4f reduction=%.4f", *report.add, *report.reduction);
    }
    std::printf(" wall_time=%.1fs -> %s\n", secs, dir.string().c_str());
  }
  return kExitOk;
}

int cmd_bias_study(const CLI::App&, const BiasArgs& a) {
  if (a.dims.empty()) throw calm::InputError("--dims needs at least one value");
  for (std::size_t d : a.dims) {
    if (d == 0) throw calm::InputError("dimensions must be positive");
  }
  std::ostringstream csv;
  csv << "dim,ks_with_replacement,ks_without_replacement\n";
  for (std::size_t d : a.dims) {
    calm::simbench::BiasStudyParams p;
    p.dim = d;
    p.reference_size = a.n;
    p.window = a.window;
    p.bootstraps = a.bootstraps;
    p.estimator = a.estimator;
    p.seed = a.seed;
    p.threads = a.threads;
    const auto r = calm::simbench::window_sharing_bias_study(p);
    csv << d << ',' << calm::simbench::format_double(r.ks_with_replacement) << ','
        << calm::simbench::format_double(r.ks_without_replacement) << '\n';
  }
  if (a.out == "-") {
    std::cout << csv.str();
  } else {
    std::ofstream out(a.out, std::ios::binary);
    if (!out) throw calm::InputError("cannot write " + a.out);
    out << csv.str();
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sequential change detection with calibrated thresholds"};
  app.require_subcommand(1);

  ConfigureArgs ca;
  auto* configure = app.add_subcommand("configure", "calibrate a threshold schedule");
  configure->add_option("--config", ca.config, "JSON file with default option values");
  configure->add_option("--ref", ca.ref, "reference CSV");
  configure->add_option("--window", ca.window, "window size W");
  configure->add_option("--ert", ca.ert, "target expected runtime");
  configure->add_option("--bootstraps", ca.bootstraps, "bootstrap count B");
  configure->add_option("--seed", ca.seed, "random seed");
  configure->add_option("--kernel", ca.kernel, "kernel family (rbf)");
  configure->add_option("--sigma", ca.sigma, "median or a bandwidth");
  configure->add_option("--algorithm", ca.algorithm, "calm, time-invariant or lsdd-inc");
  configure->add_option("--estimator", ca.estimator, "mmd or mean-diff");
  configure->add_option("--out", ca.out, "schedule output path");
  configure->add_option("--threads", ca.threads, "worker threads");
  configure->add_option("--expectation-samples", ca.expectation_samples,
                        "Monte Carlo draws for the lsdd-inc shift");

  RunArgs ra;
  auto* run = app.add_subcommand("run", "monitor a stream");
  run->add_option("--config", ra.config, "JSON file with default option values");
  run->add_option("--schedule", ra.schedule, "schedule JSON");
  run->add_option("--ref", ra.ref, "reference CSV the schedule was built from");
  run->add_option("--input", ra.input, "stream CSV, or - for stdin");
  run->add_option("--mode", ra.mode, "from-window or from-start");
  run->add_option("--max-steps", ra.max_steps, "stop after this many observations");
  run->add_option("--out", ra.out, "JSONL output, or - for stdout");
  run->add_option("--seed", ra.seed, "seed for from-start initialization");
  run->add_option("--max-attempts", ra.max_attempts, "from-start draw limit");

  SimulateArgs sa;
  auto* simulate = app.add_subcommand("simulate", "run calibration and power experiments");
  simulate->add_option("--problem", sa.problem, "d1, d2, d3 or d4")->required();
  simulate->add_option("--ert", sa.erts, "comma separated targets")
      ->delimiter(',')
      ->required();
  simulate->add_option("--n", sa.n, "reference size N");
  simulate->add_option("--window", sa.window, "window size W");
  simulate->add_option("--bootstraps", sa.bootstraps, "bootstrap count B");
  simulate->add_option("--configs", sa.configs, "reference sets");
  simulate->add_option("--runs", sa.runs, "runs per reference set");
  simulate->add_option("--power", sa.power, "on or off");
  simulate->add_option("--seed", sa.seed, "random seed");
  simulate->add_option("--out", sa.out, "output directory")->required();
  simulate->add_option("--threads", sa.threads, "worker threads");
  simulate->add_option("--mode", sa.mode, "from-window or from-start");
  simulate->add_option("--algorithm", sa.algorithm, "calm, time-invariant or lsdd-inc");
  simulate->add_option("--estimator", sa.estimator, "mmd or mean-diff");
  simulate->add_option("--expectation-samples", sa.expectation_samples,
                       "Monte Carlo draws for the lsdd-inc shift");
  simulate->add_option("--timeout-factor", sa.timeout_factor,
                       "run cap as a multiple of the ERT");

  BiasArgs ba;
  auto* bias = app.add_subcommand("bias-study", "compare bootstrap sampling schemes");
  bias->add_option("--dims", ba.dims, "comma separated dimensions")
      ->delimiter(',')
      ->required();
  bias->add_option("--estimator", ba.estimator, "mmd or mean-diff");
  bias->add_option("--seed", ba.seed, "random seed");
  bias->add_option("--out", ba.out, "CSV output, or - for stdout");
  bias->add_option("--n", ba.n, "reference size N");
  bias->add_option("--window", ba.window, "window size W");
  bias->add_option("--bootstraps", ba.bootstraps, "bootstrap count B");
  bias->add_option("--threads", ba.threads, "worker threads");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << app.help();
    report_error("usage", e.what());
    return kExitInput;
  }

  try {
    if (configure->parsed()) return cmd_configure(*configure, ca);
    if (run->parsed()) return cmd_run(*run, ra);
    if (simulate->parsed()) return cmd_simulate(*simulate, sa);
    if (bias->parsed()) return cmd_bias_study(*bias, ba);
  } catch (const calm::InitError& e) {
    report_error("init_failed", e.what(), {{"attempts", e.attempts()}});
    return kExitInput;
  } catch (const calm::InputError& e) {
    report_error("input", e.what());
    return kExitInput;
  } catch (const calm::ConfigError& e) {
    report_error("configuration", e.what());
    return kExitNumerical;
  } catch (const std::exception& e) {
    report_error("internal", e.what());
    return kExitNumerical;
  }
  return kExitInput;
}
