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
#include <vector>

#include "calm/core.hpp"

namespace calm::simbench {

/// sup_x |F_a(x) - F_b(x)| for the two empirical CDFs.
inline double ks_two_sample(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw InputError("KS distance of an empty sample");
  std::vector<double> x(a.begin(), a.end());
  std::vector<double> y(b.begin(), b.end());
  std::sort(x.begin(), x.end());
  std::sort(y.begin(), y.end());
  const double nx = static_cast<double>(x.size());
  const double ny = static_cast<double>(y.size());
  std::size_t i = 0;
  std::size_t j = 0;
  double d = 0.0;
  while (i < x.size() && j < y.size()) {
    const double v = std::min(x[i], y[j]);
    while (i < x.size() && x[i] == v) ++i;
    while (j < y.size() && y[j] == v) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / nx -
                             static_cast<double>(j) / ny));
  }
  return d;
}

/// P(T <= x) for T ~ Geometric(theta) on {1, 2, ...}.
inline double geometric_cdf(std::uint64_t x, double theta) {
  return 1.0 - std::pow(1.0 - theta, static_cast<double>(x));
}

/// Smallest x >= 1 with P(T <= x) >= u.
inline std::uint64_t geometric_quantile(double u, double theta) {
  if (!(theta > 0.0 && theta < 1.0)) {
    throw InputError("geometric rate must lie in (0, 1)");
  }
  const double q = std::ceil(std::log1p(-u) / std::log1p(-theta));
  return static_cast<std::uint64_t>(std::max(1.0, q));
}

/// KS distance between the empirical law of `runtimes` and Geometric(theta).
inline double ks_geometric(std::span<const std::uint64_t> runtimes, double theta) {
  if (runtimes.empty()) throw InputError("KS distance of an empty sample");
  std::vector<std::uint64_t> sorted(runtimes.begin(), runtimes.end());
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(sorted.size());
  double d = 0.0;
  std::size_t below = 0;
  for (std::uint64_t x = 1; x <= sorted.back(); ++x) {
    while (below < sorted.size() && sorted[below] <= x) ++below;
    d = std::max(d, std::abs(static_cast<double>(below) / n -
                             geometric_cdf(x, theta)));
  }
  return d;
}

struct QQPoint {
  double empirical = 0.0;
  double theoretical = 0.0;
};

/// (T_(i), Q((i - 0.5) / n)) against Geometric(theta).
inline std::vector<QQPoint> geometric_qq(std::span<const std::uint64_t> runtimes,
                                         double theta) {
  std::vector<std::uint64_t> sorted(runtimes.begin(), runtimes.end());
  std::sort(sorted.begin(), sorted.end());
  std::vector<QQPoint> out;
  out.reserve(sorted.size());
  const double n = static_cast<double>(sorted.size());
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    const double u = (static_cast<double>(i) + 0.5) / n;
    out.push_back({static_cast<double>(sorted[i]),
                   static_cast<double>(geometric_quantile(u, theta))});
  }
  return out;
}

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  bool contains(double x) const { return lo <= x && x <= hi; }
};

/// Wilson score interval for a binomial proportion.
inline Interval wilson_interval(std::uint64_t successes, std::uint64_t trials,
                                double z) {
  if (trials == 0) return {0.0, 1.0};
  const double n = static_cast<double>(trials);
  const double p = static_cast<double>(successes) / n;
  const double z2 = z * z;
  const double centre = (p + z2 / (2.0 * n)) / (1.0 + z2 / n);
  const double half =
      z * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n)) / (1.0 + z2 / n);
  return {centre - half, centre + half};
}

/// Two-sided 99% normal quantile.
inline constexpr double kZ99 = 2.5758293035489004;

struct HazardPoint {
  std::uint64_t t = 0;
  std::uint64_t at_risk = 0;
  std::uint64_t events = 0;
  double hazard = 0.0;
  Interval band;
};

/// Estimated P(T = t | T >= t) for t = 1..horizon, with Wilson bands.
inline std::vector<HazardPoint> hazard_estimates(
    std::span<const std::uint64_t> runtimes, std::uint64_t horizon,
    double z = kZ99) {
  std::vector<HazardPoint> out;
  for (std::uint64_t t = 1; t <= horizon; ++t) {
    HazardPoint p;
    p.t = t;
    for (std::uint64_t r : runtimes) {
      if (r >= t) ++p.at_risk;
      if (r == t) ++p.events;
    }
    p.hazard = p.at_risk ? static_cast<double>(p.events) /
                               static_cast<double>(p.at_risk)
                         : 0.0;
    p.band = wilson_interval(p.events, p.at_risk, z);
    out.push_back(p);
  }
  return out;
}

template <class T>
double mean_of(std::span<const T> xs) {
  if (xs.empty()) return 0.0;
  double acc = 0.0;
  for (const auto& x : xs) acc += static_cast<double>(x);
  return acc / static_cast<double>(xs.size());
}

}  // namespace calm::simbench
