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

#include <cstdint>
#include <random>

namespace calm {

/// Purposes of random streams; keeps streams for different jobs apart even
/// when they share a seed and an index.
enum class StreamDomain : std::uint32_t {
  bootstrap = 1,
  prepend = 2,
  expectation = 3,
  reference_set = 4,
  run = 5,
  bias_study = 6,
  power = 7,
  config_seed = 8,
};

/**
 * Seeded random stream keyed by (seed, key, domain).
 *
 * Each bootstrap or simulation run gets its own stream, so results do not
 * depend on the order in which iterations execute.
 */
class RngStream {
 public:
  using result_type = std::mt19937_64::result_type;

  RngStream(std::uint64_t seed, std::uint64_t key,
            StreamDomain domain = StreamDomain::bootstrap)
  {
    std::seed_seq seq{static_cast<std::uint32_t>(seed),
                      static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(key),
                      static_cast<std::uint32_t>(key >> 32),
                      static_cast<std::uint32_t>(domain)};
    engine_.seed(seq);
  }

  static constexpr result_type min() { return std::mt19937_64::min(); }
  static constexpr result_type max() { return std::mt19937_64::max(); }
  result_type operator()() { return engine_(); }

  /// Uniform integer in [0, n).
  std::size_t below(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }
  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  double normal() { return normal_(engine_); }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_;
};

}  // namespace calm
