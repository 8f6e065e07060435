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
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "calm/core.hpp"
#include "calm/rng.hpp"

namespace calm::simbench {

/// D1 Gaussian mean shift, D2 Gaussian covariance change, D3 uniform square
/// to uniform diamond, D4 hollowing of the uniform square.
enum class Problem { d1, d2, d3, d4 };
enum class Phase { pre, post };

inline Problem parse_problem(const std::string& s) {
  if (s == "d1" || s == "D1") return Problem::d1;
  if (s == "d2" || s == "D2") return Problem::d2;
  if (s == "d3" || s == "D3") return Problem::d3;
  if (s == "d4" || s == "D4") return Problem::d4;
  throw InputError("unknown problem '" + s + "'");
}

inline std::string to_string(Problem p) {
  switch (p) {
    case Problem::d1:
      return "d1";
    case Problem::d2:
      return "d2";
    case Problem::d3:
      return "d3";
    case Problem::d4:
      return "d4";
  }
  return "?";
}

inline std::size_t problem_dim(Problem p) {
  return p == Problem::d1 || p == Problem::d2 ? 20 : 2;
}

/// Writes one draw into `out` (size problem_dim(problem)).
inline void sample_observation(Problem problem, Phase phase, RngStream& rng,
                               std::span<double> out) {
  switch (problem) {
    case Problem::d1: {
      const double shift = phase == Phase::post ? 0.3 : 0.0;
      for (double& v : out) v = shift + rng.normal();
      return;
    }
    case Problem::d2: {
      for (std::size_t i = 0; i < out.size(); ++i) {
        const double sd = phase == Phase::post && i >= 10 ? std::sqrt(2.0) : 1.0;
        out[i] = sd * rng.normal();
      }
      return;
    }
    case Problem::d3: {
      const double u = rng.uniform(-1.0, 1.0);
      const double v = rng.uniform(-1.0, 1.0);
      if (phase == Phase::pre) {
        out[0] = u;
        out[1] = v;
      } else {
        // maps the square onto the diamond with vertices (+-2,0), (0,+-2)
        out[0] = u + v;
        out[1] = u - v;
      }
      return;
    }
    case Problem::d4: {
      for (;;) {
        const double u = rng.uniform(-1.0, 1.0);
        const double v = rng.uniform(-1.0, 1.0);
        if (phase == Phase::post && std::abs(u) <= 0.5 && std::abs(v) <= 0.5) {
          continue;
        }
        out[0] = u;
        out[1] = v;
        return;
      }
    }
  }
}

inline Samples sample_problem(Problem problem, Phase phase, std::size_t n,
                              RngStream& rng) {
  Samples out(n, problem_dim(problem));
  for (std::size_t i = 0; i < n; ++i) {
    sample_observation(problem, phase, rng, out.row(i));
  }
  return out;
}

struct Distribution {
  Problem problem = Problem::d1;
  Phase phase = Phase::pre;
};

/// Draws from `pre` before time tau and from `post` from tau on (t is
/// 1-based). No tau means no change.
struct StreamModel {
  Distribution pre;
  Distribution post;
  std::optional<std::uint64_t> tau;

  void validate() const {
    if (tau && *tau < 1) throw InputError("change point must be >= 1");
    if (problem_dim(pre.problem) != problem_dim(post.problem)) {
      throw InputError("pre and post distributions differ in dimension");
    }
  }
};

/// Observation source for run_to_detection.
class StreamSource {
 public:
  StreamSource(StreamModel model, RngStream rng)
      : model_(model), rng_(std::move(rng)) {
    model_.validate();
  }

  bool operator()(std::vector<double>& out) {
    ++t_;
    const bool changed = model_.tau && t_ >= *model_.tau;
    const auto& dist = changed ? model_.post : model_.pre;
    sample_observation(dist.problem, dist.phase, rng_, out);
    return true;
  }

 private:
  StreamModel model_;
  RngStream rng_;
  std::uint64_t t_ = 0;
};

}  // namespace calm::simbench
