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
#include <concepts>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "calm/calibration.hpp"
#include "calm/core.hpp"
#include "calm/estimators.hpp"
#include "calm/rng.hpp"

namespace calm {

/// from_window: first test at t = W. from_start: W held-out points are
/// prepended and testing starts at t = 1.
enum class StartMode { from_window, from_start };

enum class DetectorStatus { warming_up, running, detected };

inline StartMode parse_start_mode(const std::string& s) {
  if (s == "from-window" || s == "from_window") return StartMode::from_window;
  if (s == "from-start" || s == "from_start") return StartMode::from_start;
  throw InputError("unknown mode '" + s + "'");
}

/// The prepend rejection loop ran out of attempts.
class InitError : public std::runtime_error {
 public:
  InitError(const std::string& what, std::size_t attempts)
      : std::runtime_error(what), attempts_(attempts) {}
  std::size_t attempts() const { return attempts_; }

 private:
  std::size_t attempts_;
};

struct DetectionEvent {
  std::uint64_t t = 0;
  double statistic = 0.0;
  double threshold = 0.0;
  /// Absolute detection time T.
  std::uint64_t runtime = 0;
  /// Number of tests performed up to and including T (T - W + 1 when
  /// testing starts at W, T when it starts at 1).
  std::uint64_t tests = 0;
};

struct StepOutcome {
  std::uint64_t t = 0;
  std::optional<double> statistic;
  std::optional<double> threshold;
  bool detection = false;

  bool tested() const { return threshold.has_value(); }
};

template <class S>
concept WindowStream = requires(S s, const S& cs, const Samples& w,
                                Observation z) {
  s.fill(w);
  { s.update(z) } -> std::convertible_to<double>;
  { cs.statistic() } -> std::convertible_to<double>;
  { cs.window_size() } -> std::convertible_to<std::size_t>;
  { cs.dim() } -> std::convertible_to<std::size_t>;
};

/// Type-erased WindowStream, for estimators chosen at run time.
class AnyStream {
 public:
  template <WindowStream S>
    requires(!std::same_as<std::decay_t<S>, AnyStream>)
  AnyStream(S stream)  // NOLINT(google-explicit-constructor)
      : impl_(std::make_unique<Model<S>>(std::move(stream))) {}

  AnyStream(const AnyStream& other) : impl_(other.impl_->clone()) {}
  AnyStream(AnyStream&&) noexcept = default;
  AnyStream& operator=(const AnyStream& other) {
    impl_ = other.impl_->clone();
    return *this;
  }
  AnyStream& operator=(AnyStream&&) noexcept = default;

  void fill(const Samples& w) { impl_->fill(w); }
  double update(Observation z) { return impl_->update(z); }
  double statistic() const { return impl_->statistic(); }
  std::size_t window_size() const { return impl_->window_size(); }
  std::size_t dim() const { return impl_->dim(); }

 private:
  struct Concept {
    virtual ~Concept() = default;
    virtual void fill(const Samples&) = 0;
    virtual double update(Observation) = 0;
    virtual double statistic() const = 0;
    virtual std::size_t window_size() const = 0;
    virtual std::size_t dim() const = 0;
    virtual std::unique_ptr<Concept> clone() const = 0;
  };
  template <class S>
  struct Model final : Concept {
    explicit Model(S s) : stream(std::move(s)) {}
    void fill(const Samples& w) override { stream.fill(w); }
    double update(Observation z) override { return stream.update(z); }
    double statistic() const override { return stream.statistic(); }
    std::size_t window_size() const override { return stream.window_size(); }
    std::size_t dim() const override { return stream.dim(); }
    std::unique_ptr<Concept> clone() const override {
      return std::make_unique<Model>(*this);
    }
    S stream;
  };

  std::unique_ptr<Concept> impl_;
};

/**
 * Sequential detector over a sliding test window.
 *
 * Compares S_t against the scheduled threshold with a strict inequality and
 * freezes on the first detection. Thresholds are looked up at
 *   min(t, 2W-1) - W      (from_window, t >= W)
 *   min(W+t, 2W-1) - W    (from_start,  t >= 1)
 * clamped to the last scheduled value.
 */
template <WindowStream Stream>
class Detector {
 public:
  static Detector from_window(std::vector<double> thresholds, Stream stream) {
    return Detector(std::move(thresholds), std::move(stream),
                    StartMode::from_window);
  }

  /**
   * Prepends W points drawn without replacement from `pool` and accepts the
   * draw only if its statistic is below the first threshold; redraws up to
   * `max_attempts` times.
   */
  static Detector from_start(std::vector<double> thresholds, Stream stream,
                             const Samples& pool, RngStream& rng,
                             std::size_t max_attempts = 1000) {
    Detector d(std::move(thresholds), std::move(stream), StartMode::from_start);
    const std::size_t w = d.window_;
    if (pool.size() < w) {
      throw InputError("from-start initialization needs at least W held-out "
                       "points, have " + std::to_string(pool.size()));
    }
    for (std::size_t attempt = 1; attempt <= max_attempts; ++attempt) {
      const auto idx = draw_without_replacement(pool.size(), w, rng);
      d.stream_.fill(pool.select(idx));
      d.init_attempts_ = attempt;
      const double s0 = d.stream_.statistic();
      if (s0 < d.thresholds_.front()) {
        d.initial_statistic_ = s0;
        d.status_ = DetectorStatus::running;
        return d;
      }
    }
    throw InitError("prepend initialization failed after " +
                        std::to_string(max_attempts) + " attempts",
                    max_attempts);
  }

  StepOutcome step(Observation z) {
    if (status_ == DetectorStatus::detected) {
      throw StateError("detector already detected a change at t = " +
                       std::to_string(t_));
    }
    if (z.size() != stream_.dim()) {
      throw InputError("observation dimension " + std::to_string(z.size()) +
                       " differs from detector dimension " +
                       std::to_string(stream_.dim()));
    }
    ++t_;
    StepOutcome out;
    out.t = t_;
    double stat = 0.0;
    if (status_ == DetectorStatus::warming_up) {
      warmup_.push_back(z);
      if (warmup_.size() < window_) return out;
      stream_.fill(warmup_);
      warmup_ = Samples(stream_.dim());
      status_ = DetectorStatus::running;
      stat = stream_.statistic();
    } else {
      stat = stream_.update(z);
    }
    const double h = threshold_for(t_);
    out.statistic = stat;
    out.threshold = h;
    if (stat > h) {
      out.detection = true;
      status_ = DetectorStatus::detected;
      event_ = DetectionEvent{t_, stat, h, t_, tests_through(t_)};
    }
    return out;
  }

  /// Threshold applied at time t (t >= first test time).
  double threshold_for(std::uint64_t t) const {
    const std::uint64_t w = window_;
    const std::uint64_t last = 2 * w - 1;
    const std::uint64_t pos = mode_ == StartMode::from_window
                                  ? std::min<std::uint64_t>(t, last) - w
                                  : std::min<std::uint64_t>(w + t, last) - w;
    return thresholds_[std::min<std::uint64_t>(pos, thresholds_.size() - 1)];
  }

  std::uint64_t first_test_time() const {
    return mode_ == StartMode::from_window ? window_ : 1;
  }

  DetectorStatus status() const { return status_; }
  StartMode mode() const { return mode_; }
  std::uint64_t time() const { return t_; }
  std::size_t window() const { return window_; }
  std::size_t dim() const { return stream_.dim(); }
  std::size_t init_attempts() const { return init_attempts_; }
  std::optional<double> initial_statistic() const { return initial_statistic_; }
  const std::optional<DetectionEvent>& event() const { return event_; }
  const Stream& stream() const { return stream_; }

 private:
  Detector(std::vector<double> thresholds, Stream stream, StartMode mode)
      : thresholds_(std::move(thresholds)),
        stream_(std::move(stream)),
        mode_(mode),
        window_(stream_.window_size()),
        warmup_(stream_.dim()) {
    if (thresholds_.empty()) throw InputError("detector needs thresholds");
  }

  std::uint64_t tests_through(std::uint64_t t) const {
    return t - first_test_time() + 1;
  }

  std::vector<double> thresholds_;
  Stream stream_;
  StartMode mode_;
  std::size_t window_;
  DetectorStatus status_ = DetectorStatus::warming_up;
  std::uint64_t t_ = 0;
  Samples warmup_;
  std::size_t init_attempts_ = 0;
  std::optional<double> initial_statistic_;
  std::optional<DetectionEvent> event_;
};

struct RunResult {
  std::optional<DetectionEvent> event;
  std::uint64_t steps = 0;

  bool detected() const { return event.has_value(); }
};

/**
 * Drives `detector` with observations from `source` until a detection, the
 * step budget runs out, or the source is exhausted. `source(buffer)` fills a
 * buffer of the detector's dimension and returns false when exhausted.
 * `observer` sees every step outcome.
 */
template <WindowStream Stream, class Source, class Observer>
RunResult run_to_detection(Detector<Stream>& detector, Source&& source,
                           std::uint64_t max_steps, Observer&& observer) {
  RunResult result;
  std::vector<double> buffer(detector.dim());
  while (result.steps < max_steps) {
    if (!source(buffer)) break;
    const auto outcome = detector.step(buffer);
    ++result.steps;
    observer(outcome);
    if (outcome.detection) {
      result.event = detector.event();
      break;
    }
  }
  return result;
}

template <WindowStream Stream, class Source>
RunResult run_to_detection(Detector<Stream>& detector, Source&& source,
                           std::uint64_t max_steps) {
  return run_to_detection(detector, std::forward<Source>(source), max_steps,
                          [](const StepOutcome&) {});
}

/// Operational reference window of a schedule.
inline std::shared_ptr<const Samples> schedule_reference_window(
    const ThresholdSchedule& schedule, const Samples& ref) {
  schedule.validate_against(ref);
  return std::make_shared<const Samples>(
      ref.select(schedule.ref_window_indices));
}

/// Stream for the schedule's estimator, holding its reference window.
inline AnyStream make_schedule_stream(const ThresholdSchedule& schedule,
                                      const Samples& ref) {
  auto window = schedule_reference_window(schedule, ref);
  const auto estimator =
      make_estimator(schedule.config.estimator, schedule.config.kernel);
  return std::visit(
      [&](const auto& est) -> AnyStream {
        return est.make_stream(window, schedule.window());
      },
      estimator);
}

/// Detector that starts testing once the first W observations arrive.
inline Detector<AnyStream> detector_init_from_window(
    const ThresholdSchedule& schedule, const Samples& ref) {
  return Detector<AnyStream>::from_window(schedule.thresholds,
                                          make_schedule_stream(schedule, ref));
}

/// Detector primed with W of the schedule's held-out points.
inline Detector<AnyStream> detector_init_from_start(
    const ThresholdSchedule& schedule, const Samples& ref, RngStream& rng,
    std::size_t max_attempts = 1000) {
  auto stream = make_schedule_stream(schedule, ref);
  if (schedule.holdout_indices.size() < schedule.window()) {
    throw InputError("schedule holds " +
                     std::to_string(schedule.holdout_indices.size()) +
                     " held-out points; from-start needs W = " +
                     std::to_string(schedule.window()));
  }
  const auto pool = ref.select(schedule.holdout_indices);
  return Detector<AnyStream>::from_start(schedule.thresholds, std::move(stream),
                                         pool, rng, max_attempts);
}

}  // namespace calm
