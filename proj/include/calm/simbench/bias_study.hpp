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
#include <string>
#include <vector>

#include "calm/calibration.hpp"
#include "calm/estimators.hpp"
#include "calm/kernel.hpp"
#include "calm/mmd.hpp"
#include "calm/parallel.hpp"
#include "calm/rng.hpp"
#include "calm/simbench/stats.hpp"

namespace calm::simbench {

struct BiasStudyParams {
  std::size_t dim = 1;
  std::size_t reference_size = 1000;
  std::size_t window = 25;
  std::size_t bootstraps = 25000;
  std::string estimator = "mmd";
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

/**
 * Bootstrap approximations of the law of D(Z~^(N-W), Z^(W)) on N(0, I_d)
 * data, each next to a sample of the law it targets (test window drawn
 * fresh from p, reference window drawn from z~ the same way as in the
 * bootstrap).
 */
struct BiasStudyResult {
  std::vector<double> bootstrap_with;
  std::vector<double> truth_with;
  std::vector<double> bootstrap_without;
  std::vector<double> truth_without;
  double ks_with_replacement = 0.0;
  double ks_without_replacement = 0.0;
};

namespace detail {

enum class BiasSample : std::uint64_t {
  bootstrap_with = 0,
  truth_with = 1,
  bootstrap_without = 2,
  truth_without = 3,
};

inline RngStream bias_rng(const BiasStudyParams& p, BiasSample kind,
                          std::size_t index) {
  const std::uint64_t key = ((p.dim * 4 + static_cast<std::uint64_t>(kind)) << 32) |
                            static_cast<std::uint64_t>(index);
  return RngStream(p.seed, key, StreamDomain::bias_study);
}

inline Samples gaussian_sample(std::size_t n, std::size_t d, RngStream& rng) {
  Samples out(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    for (double& v : out.row(i)) v = rng.normal();
  }
  return out;
}

/// Occurrence counts of `count` draws with replacement from [0, n).
inline std::vector<std::uint32_t> multiset_counts(std::size_t n,
                                                  std::size_t count,
                                                  RngStream& rng) {
  std::vector<std::uint32_t> c(n, 0);
  for (std::size_t i : draw_with_replacement(n, count, rng)) ++c[i];
  return c;
}

/// Kernel matrix of the reference set with its row off-diagonal sums.
struct Gram {
  std::size_t n = 0;
  std::vector<double> k;
  std::vector<double> row_offdiag;
  double total_offdiag = 0.0;

  double at(std::size_t i, std::size_t j) const { return k[i * n + j]; }
};

template <class Kernel>
Gram make_gram(const Samples& z, const Kernel& kernel) {
  Gram g;
  g.n = z.size();
  g.k.assign(g.n * g.n, 1.0);
  g.row_offdiag.assign(g.n, 0.0);
  for (std::size_t i = 0; i < g.n; ++i) {
    for (std::size_t j = i + 1; j < g.n; ++j) {
      const double v = kernel(z[i], z[j]);
      g.k[i * g.n + j] = v;
      g.k[j * g.n + i] = v;
    }
  }
  for (std::size_t i = 0; i < g.n; ++i) {
    for (std::size_t j = 0; j < g.n; ++j) {
      if (i != j) g.row_offdiag[i] += g.k[i * g.n + j];
    }
    g.total_offdiag += g.row_offdiag[i];
  }
  return g;
}

/// Sum over ordered pairs of distinct draws of a multiset given by counts.
inline double multiset_offdiag(const Gram& g, const std::vector<std::uint32_t>& c,
                               const std::vector<std::size_t>& support) {
  double acc = 0.0;
  for (std::size_t ia = 0; ia < support.size(); ++ia) {
    const std::size_t a = support[ia];
    const double ca = c[a];
    acc += ca * (ca - 1.0);
    double row = 0.0;
    for (std::size_t ib = ia + 1; ib < support.size(); ++ib) {
      const std::size_t b = support[ib];
      row += c[b] * g.at(a, b);
    }
    acc += 2.0 * ca * row;
  }
  return acc;
}

inline std::vector<std::size_t> support_of(const std::vector<std::uint32_t>& c) {
  std::vector<std::size_t> s;
  for (std::size_t i = 0; i < c.size(); ++i) {
    if (c[i]) s.push_back(i);
  }
  return s;
}

/// Sums for the complement of `dropped` (W distinct rows): its own
/// off-diagonal sum, from the total minus the dropped block and cross terms.
inline double complement_offdiag(const Gram& g,
                                 const std::vector<std::size_t>& dropped) {
  double inner = 0.0;
  double rows = 0.0;
  for (std::size_t i = 0; i < dropped.size(); ++i) {
    rows += g.row_offdiag[dropped[i]];
    for (std::size_t j = i + 1; j < dropped.size(); ++j) {
      inner += 2.0 * g.at(dropped[i], dropped[j]);
    }
  }
  const double cross = rows - inner;
  return g.total_offdiag - inner - 2.0 * cross;
}

inline BiasStudyResult mmd_bias_study(const BiasStudyParams& p,
                                      const Samples& z) {
  const RbfKernel kernel(median_heuristic(z));
  const Gram g = make_gram(z, kernel);
  const std::size_t n = p.reference_size;
  const std::size_t w = p.window;
  const std::size_t m = n - w;
  BiasStudyResult r;
  r.bootstrap_with.resize(p.bootstraps);
  r.truth_with.resize(p.bootstraps);
  r.bootstrap_without.resize(p.bootstraps);
  r.truth_without.resize(p.bootstraps);

  parallel_for(p.bootstraps, p.threads, [&](std::size_t s) {
    {
      auto rng = bias_rng(p, BiasSample::bootstrap_with, s);
      const auto c = multiset_counts(n, m, rng);
      const auto e = multiset_counts(n, w, rng);
      const auto cs = support_of(c);
      const auto es = support_of(e);
      double cross = 0.0;
      for (std::size_t b : es) {
        double col = 0.0;
        for (std::size_t a : cs) col += c[a] * g.at(b, a);
        cross += e[b] * col;
      }
      r.bootstrap_with[s] = mmd2_from_sums(multiset_offdiag(g, c, cs),
                                           multiset_offdiag(g, e, es), cross, m, w);
    }
    {
      auto rng = bias_rng(p, BiasSample::truth_with, s);
      const auto c = multiset_counts(n, m, rng);
      const auto cs = support_of(c);
      const Samples y = gaussian_sample(w, p.dim, rng);
      double cross = 0.0;
      for (std::size_t a : cs) {
        double row = 0.0;
        for (std::size_t j = 0; j < w; ++j) row += kernel(z[a], y[j]);
        cross += c[a] * row;
      }
      r.truth_with[s] = mmd2_from_sums(multiset_offdiag(g, c, cs),
                                       offdiag_sum(y, kernel), cross, m, w);
    }
    {
      auto rng = bias_rng(p, BiasSample::bootstrap_without, s);
      const auto held = draw_without_replacement(n, w, rng);
      double inner = 0.0;
      double rows = 0.0;
      for (std::size_t i = 0; i < w; ++i) {
        rows += g.row_offdiag[held[i]];
        for (std::size_t j = i + 1; j < w; ++j) {
          inner += 2.0 * g.at(held[i], held[j]);
        }
      }
      const double cross = rows - inner;
      r.bootstrap_without[s] = mmd2_from_sums(
          g.total_offdiag - inner - 2.0 * cross, inner, cross, m, w);
    }
    {
      auto rng = bias_rng(p, BiasSample::truth_without, s);
      const auto dropped = draw_without_replacement(n, w, rng);
      const Samples y = gaussian_sample(w, p.dim, rng);
      std::vector<char> is_dropped(n, 0);
      for (std::size_t i : dropped) is_dropped[i] = 1;
      double cross = 0.0;
      for (std::size_t a = 0; a < n; ++a) {
        if (is_dropped[a]) continue;
        for (std::size_t j = 0; j < w; ++j) cross += kernel(z[a], y[j]);
      }
      r.truth_without[s] = mmd2_from_sums(complement_offdiag(g, dropped),
                                          offdiag_sum(y, kernel), cross, m, w);
    }
  });
  return r;
}

/// Any estimator, by gathering the windows explicitly.
template <TwoSampleEstimator Estimator>
BiasStudyResult generic_bias_study(const BiasStudyParams& p, const Samples& z,
                                   const Estimator& est) {
  const std::size_t n = p.reference_size;
  const std::size_t w = p.window;
  const std::size_t m = n - w;
  BiasStudyResult r;
  r.bootstrap_with.resize(p.bootstraps);
  r.truth_with.resize(p.bootstraps);
  r.bootstrap_without.resize(p.bootstraps);
  r.truth_without.resize(p.bootstraps);
  parallel_for(p.bootstraps, p.threads, [&](std::size_t s) {
    {
      auto rng = bias_rng(p, BiasSample::bootstrap_with, s);
      const auto x = z.select(draw_with_replacement(n, m, rng));
      const auto y = z.select(draw_with_replacement(n, w, rng));
      r.bootstrap_with[s] = est.batch(x, y);
    }
    {
      auto rng = bias_rng(p, BiasSample::truth_with, s);
      const auto x = z.select(draw_with_replacement(n, m, rng));
      r.truth_with[s] = est.batch(x, gaussian_sample(w, p.dim, rng));
    }
    {
      auto rng = bias_rng(p, BiasSample::bootstrap_without, s);
      const auto split = split_without_replacement(n, w, rng);
      r.bootstrap_without[s] =
          est.batch(z.select(split.reference), z.select(split.holdout));
    }
    {
      auto rng = bias_rng(p, BiasSample::truth_without, s);
      const auto split = split_without_replacement(n, w, rng);
      r.truth_without[s] =
          est.batch(z.select(split.reference), gaussian_sample(w, p.dim, rng));
    }
  });
  return r;
}

}  // namespace detail

/// Returns both bootstrap samples, their targets and the two KS distances.
inline BiasStudyResult window_sharing_bias_study(const BiasStudyParams& p) {
  if (p.dim == 0) throw InputError("dimension must be positive");
  if (p.window < 2 || p.reference_size < 2 * p.window || p.bootstraps == 0) {
    throw InputError("bias study needs W >= 2, N >= 2W and B > 0");
  }
  RngStream rng(p.seed, p.dim, StreamDomain::reference_set);
  const Samples z = detail::gaussian_sample(p.reference_size, p.dim, rng);
  BiasStudyResult r;
  if (p.estimator == "mmd") {
    r = detail::mmd_bias_study(p, z);
  } else if (p.estimator == "mean-diff") {
    r = detail::generic_bias_study(p, z, MeanDiffEstimator{});
  } else {
    throw InputError("unknown estimator '" + p.estimator + "'");
  }
  r.ks_with_replacement = ks_two_sample(r.bootstrap_with, r.truth_with);
  r.ks_without_replacement = ks_two_sample(r.bootstrap_without, r.truth_without);
  return r;
}

}  // namespace calm::simbench
