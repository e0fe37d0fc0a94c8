// Copyright 2026 The efbv Authors. All Rights Reserved.
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
// =============================================================================

#pragma once

// Independent checks of the closed-form compressor constants and of the
// reference optimum:
//  * exhaustive enumeration of equally likely index subsets (small d),
//  * Monte Carlo estimation of bias, variance and averaged variance,
//  * high-accuracy proximal gradient reference solutions.
// The enumeration code re-derives every operator from its definition and
// does not call compress().

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <utility>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "efbv/compressors.hpp"
#include "efbv/core.hpp"
#include "efbv/problems.hpp"
#include "efbv/rng.hpp"

namespace efbv {

// ---------------------------------------------------------------------------
// Exhaustive enumeration
// ---------------------------------------------------------------------------

struct Outcome {
  double probability = 0.0;
  Vector value;
};

/// Exact first and second moments of C(x).
struct ExactMoments {
  Vector mean;
  double sq_bias = 0.0;   // ||E C(x) - x||^2
  double variance = 0.0;  // E ||C(x) - E C(x)||^2
  double mse = 0.0;       // E ||C(x) - x||^2
  std::size_t outcomes = 0;
};

inline constexpr std::uint64_t kMaxEnumeratedOutcomes = 1'000'000;

namespace detail {

// C(m, k), saturating at the largest uint64.
inline std::uint64_t binomial_capped(std::uint64_t m, std::uint64_t k) {
  if (k > m) return 0;
  k = std::min(k, m - k);
  constexpr std::uint64_t kCap = std::numeric_limits<std::uint64_t>::max();
  std::uint64_t c = 1;
  for (std::uint64_t j = 1; j <= k; ++j) {
    const std::uint64_t f = m - k + j;
    if (c > kCap / f) return kCap;
    c = c * f / j;
  }
  return c;
}

// Calls fn(subset) for every k-subset of {0..m-1} in lexicographic order.
template <class Fn>
void for_each_subset(std::size_t m, std::size_t k, Fn&& fn) {
  std::vector<std::size_t> idx(k);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  while (true) {
    fn(std::as_const(idx));
    std::size_t j = k;
    while (j > 0 && idx[j - 1] == m - k + j - 1) --j;
    if (j == 0) return;
    ++idx[j - 1];
    for (std::size_t q = j; q < k; ++q) idx[q] = idx[q - 1] + 1;
  }
}

// Top-k by a stable sort on decreasing magnitude (ties keep index order).
inline std::vector<std::size_t> top_indices(std::span<const double> x, std::size_t k) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return std::abs(x[a]) > std::abs(x[b]); });
  order.resize(k);
  std::sort(order.begin(), order.end());
  return order;
}

inline std::uint64_t outcome_count(const Family& family, std::size_t d, std::size_t n) {
  return std::visit(
      overloaded{
          [](const Identity&) -> std::uint64_t { return 1; },
          [&](const RandK& c) { return binomial_capped(d, c.k); },
          [](const TopK&) -> std::uint64_t { return 1; },
          [&](const Mix& c) { return binomial_capped(d - c.k, c.k_prime); },
          [&](const Comp& c) { return binomial_capped(c.k_prime, c.k); },
          [&](const NiceSampling& c) { return binomial_capped(n, c.m); },
          [&](const Scaled& c) { return outcome_count(*c.inner, d, n); },
      },
      family);
}

inline void enumerate_family(const Family& family, std::span<const double> x, std::size_t n,
                             std::size_t worker, std::vector<Outcome>& out) {
  const std::size_t d = x.size();
  auto keep = [&](std::span<const std::size_t> idx, double factor) {
    Vector v(d, 0.0);
    for (std::size_t i : idx) v[i] = factor * x[i];
    return v;
  };
  std::visit(
      overloaded{
          [&](const Identity&) { out.push_back({1.0, Vector(x.begin(), x.end())}); },
          [&](const RandK& c) {
            const double p = 1.0 / static_cast<double>(binomial_capped(d, c.k));
            const double factor = static_cast<double>(d) / static_cast<double>(c.k);
            for_each_subset(d, c.k, [&](const std::vector<std::size_t>& s) {
              out.push_back({p, keep(s, factor)});
            });
          },
          [&](const TopK& c) { out.push_back({1.0, keep(top_indices(x, c.k), 1.0)}); },
          [&](const Mix& c) {
            const auto top = top_indices(x, c.k);
            std::vector<std::size_t> rest;
            for (std::size_t i = 0; i < d; ++i)
              if (!std::binary_search(top.begin(), top.end(), i)) rest.push_back(i);
            const double p = 1.0 / static_cast<double>(binomial_capped(rest.size(), c.k_prime));
            for_each_subset(rest.size(), c.k_prime, [&](const std::vector<std::size_t>& s) {
              std::vector<std::size_t> kept = top;
              for (std::size_t j : s) kept.push_back(rest[j]);
              out.push_back({p, keep(kept, 1.0)});
            });
          },
          [&](const Comp& c) {
            const auto top = top_indices(x, c.k_prime);
            const double p = 1.0 / static_cast<double>(binomial_capped(c.k_prime, c.k));
            const double factor = static_cast<double>(c.k_prime) / static_cast<double>(c.k);
            for_each_subset(c.k_prime, c.k, [&](const std::vector<std::size_t>& s) {
              std::vector<std::size_t> kept;
              for (std::size_t j : s) kept.push_back(top[j]);
              out.push_back({p, keep(kept, factor)});
            });
          },
          [&](const NiceSampling& c) {
            const double p = 1.0 / static_cast<double>(binomial_capped(n, c.m));
            const double factor = static_cast<double>(n) / static_cast<double>(c.m);
            for_each_subset(n, c.m, [&](const std::vector<std::size_t>& s) {
              Vector v(d, 0.0);
              if (std::find(s.begin(), s.end(), worker) != s.end()) {
                for (std::size_t i = 0; i < d; ++i) v[i] = factor * x[i];
              }
              out.push_back({p, std::move(v)});
            });
          },
          [&](const Scaled& c) {
            const std::size_t first = out.size();
            enumerate_family(*c.inner, x, n, worker, out);
            for (std::size_t j = first; j < out.size(); ++j)
              for (double& v : out[j].value) v *= c.lambda;
          },
      },
      family);
}

}  // namespace detail

/// All equally likely outputs of C(x). For nice sampling the outputs seen by
/// `worker` among n are listed, one per m-subset. Refuses outcome spaces
/// larger than 10^6.
inline std::vector<Outcome> enumerate_outcomes(const CompressorSpec& spec,
                                               std::span<const double> x, std::size_t n = 1,
                                               std::size_t worker = 0) {
  require_dim(x.size(), spec.dim, "enumerate_outcomes");
  validate(spec, n);
  const std::uint64_t count = detail::outcome_count(spec.family, spec.dim, n);
  if (count > kMaxEnumeratedOutcomes) {
    throw ConfigError("refusing to enumerate " + to_string(spec) + ": " +
                      std::to_string(count) + " outcomes, limit " +
                      std::to_string(kMaxEnumeratedOutcomes));
  }
  std::vector<Outcome> out;
  out.reserve(count);
  detail::enumerate_family(spec.family, x, n, worker, out);
  return out;
}

inline ExactMoments exact_moments(const std::vector<Outcome>& outcomes, std::span<const double> x) {
  ExactMoments m;
  m.outcomes = outcomes.size();
  m.mean.assign(x.size(), 0.0);
  for (const Outcome& o : outcomes) linalg::axpy(o.probability, o.value, m.mean);
  m.sq_bias = linalg::sqdist(m.mean, x);
  for (const Outcome& o : outcomes) {
    m.variance += o.probability * linalg::sqdist(o.value, m.mean);
    m.mse += o.probability * linalg::sqdist(o.value, x);
  }
  return m;
}

inline ExactMoments enumerate_exact(const CompressorSpec& spec, std::span<const double> x,
                                    std::size_t n = 1) {
  return exact_moments(enumerate_outcomes(spec, x, n), x);
}

/// E || (1/n) sum_i (C_i(x_i) - E C_i(x_i)) ||^2 computed exactly. Joint over
/// the shared subset for nice sampling, independent otherwise.
inline double exact_average_variance(const CompressorSpec& spec,
                                     const std::vector<Vector>& xs) {
  const std::size_t n = xs.size();
  if (n == 0) throw ConfigError("need at least one worker input");
  if (!detail::contains_nice(spec.family)) {
    double v = 0.0;
    for (const Vector& x : xs) v += enumerate_exact(spec, x, n).variance;
    return v / static_cast<double>(n * n);
  }
  // Joint: outcome j of every worker corresponds to the same subset.
  std::vector<std::vector<Outcome>> per(n);
  for (std::size_t i = 0; i < n; ++i) per[i] = enumerate_outcomes(spec, xs[i], n, i);
  const std::size_t d = spec.dim;
  const std::size_t count = per[0].size();
  std::vector<Vector> avg(count, Vector(d, 0.0));
  Vector mean(d, 0.0);
  for (std::size_t j = 0; j < count; ++j) {
    for (std::size_t i = 0; i < n; ++i)
      linalg::axpy(1.0 / static_cast<double>(n), per[i][j].value, avg[j]);
    linalg::axpy(per[0][j].probability, avg[j], mean);
  }
  double v = 0.0;
  for (std::size_t j = 0; j < count; ++j) v += per[0][j].probability * linalg::sqdist(avg[j], mean);
  return v;
}

// ---------------------------------------------------------------------------
// Monte Carlo estimation
// ---------------------------------------------------------------------------

struct EstimateOptions {
  std::size_t random_probes = 3;
  std::size_t samples = 100'000;
  std::uint64_t seed = 1;
  /// Worker count (shapes nice sampling's output and the omega_av check).
  std::size_t workers = 1;
  /// Tolerance in standard errors.
  double z = 4.0;
};

struct EstimateReport {
  std::string name;
  ClassParams claimed;
  double eta_hat = 0.0;
  double omega_hat = 0.0;
  std::optional<double> omega_av_hat;
  std::size_t samples = 0;
  std::size_t probe_count = 0;
  /// max over probes and checks of (estimate - claim - z * stderr); <= 0 passes.
  double max_violation = -std::numeric_limits<double>::infinity();
  std::vector<std::string> notes;

  bool pass() const { return max_violation <= 0.0; }
};

/// Gaussian probes plus shapes near the extremal cases: one-hot, uniform
/// magnitude with alternating signs, geometric decay.
inline std::vector<Vector> make_probes(std::size_t d, std::size_t random_count,
                                       std::uint64_t seed) {
  std::vector<Vector> probes;
  RngStream rng(seed, 0xABCDu, 0, StreamPurpose::kCertify);
  for (std::size_t p = 0; p < random_count; ++p) {
    Vector x(d);
    for (double& v : x) v = rng.normal();
    probes.push_back(std::move(x));
  }
  Vector onehot(d, 0.0);
  onehot[d / 2] = 1.0;
  probes.push_back(onehot);
  Vector uniform(d);
  for (std::size_t i = 0; i < d; ++i) uniform[i] = (i % 2 == 0) ? 1.0 : -1.0;
  probes.push_back(uniform);
  Vector geometric(d);
  for (std::size_t i = 0; i < d; ++i) geometric[i] = std::pow(0.7, static_cast<double>(i));
  probes.push_back(geometric);
  return probes;
}

/// Tuples (x_1..x_n) for the averaged-variance check: identical
/// uniform-magnitude inputs, independent Gaussians, and centered Gaussians
/// (sum_i x_i = 0, the extremal case for nice sampling).
inline std::vector<std::vector<Vector>> make_probe_tuples(std::size_t d, std::size_t n,
                                                          std::size_t random_count,
                                                          std::uint64_t seed) {
  std::vector<std::vector<Vector>> tuples;
  Vector uniform(d);
  for (std::size_t i = 0; i < d; ++i) uniform[i] = (i % 2 == 0) ? 1.0 : -1.0;
  tuples.emplace_back(n, uniform);
  RngStream rng(seed, 0xBCDEu, 0, StreamPurpose::kCertify);
  for (std::size_t p = 0; p < random_count; ++p) {
    std::vector<Vector> xs(n, Vector(d));
    for (auto& x : xs)
      for (double& v : x) v = rng.normal();
    tuples.push_back(xs);
    if (n > 1) {
      Vector mean(d, 0.0);
      for (const auto& x : xs) linalg::axpy(1.0 / static_cast<double>(n), x, mean);
      for (auto& x : xs) linalg::axpy(-1.0, mean, x);
      tuples.push_back(std::move(xs));
    }
  }
  return tuples;
}

/// A randomized operator under test: writes one realization of C(x) into
/// out (dense, zero-initialized by the caller).
using Sampler = std::function<void(std::span<const double> x, RngStream& rng,
                                   const Participation& part, std::span<double> out)>;

/// Dense sampler backed by compress_into.
inline Sampler spec_sampler(const CompressorSpec& spec) {
  auto ws = std::make_shared<CompressWorkspace>();
  auto msg = std::make_shared<SparseMessage>();
  return [spec, ws, msg](std::span<const double> x, RngStream& rng, const Participation& part,
                         std::span<double> out) {
    compress_into(spec, x, rng, *msg, *ws, part);
    accumulate(*msg, 1.0, out);
  };
}

namespace detail {

struct ProbeEstimate {
  double eta_hat = 0.0;
  double eta_se = 0.0;
  double omega_hat = 0.0;
  double omega_se = 0.0;
};

// Mean, centered second moment and their standard errors from S stored
// samples (row-major S x d), all relative to `scale` (= ||x||^2).
inline ProbeEstimate summarize(const std::vector<double>& samples, std::size_t s_count,
                               std::size_t d, std::span<const double> target, double scale) {
  Vector mean(d, 0.0);
  for (std::size_t s = 0; s < s_count; ++s)
    linalg::axpy(1.0, std::span(samples).subspan(s * d, d), mean);
  for (double& v : mean) v /= static_cast<double>(s_count);
  double q_sum = 0.0;
  double q_sq = 0.0;
  for (std::size_t s = 0; s < s_count; ++s) {
    const double q = linalg::sqdist(std::span(samples).subspan(s * d, d), mean);
    q_sum += q;
    q_sq += q * q;
  }
  const auto S = static_cast<double>(s_count);
  const double var = q_sum / (S - 1.0);
  const double q_mean = q_sum / S;
  const double q_var = std::max(0.0, q_sq / S - q_mean * q_mean) * S / (S - 1.0);
  ProbeEstimate e;
  e.omega_hat = var / scale;
  e.omega_se = std::sqrt(q_var / S) / scale;
  if (!target.empty()) {
    e.eta_hat = std::sqrt(linalg::sqdist(mean, target) / scale);
    e.eta_se = std::sqrt(var / S / scale);
  }
  return e;
}

// Rounding in sums over ~1e5 samples; far below any statistical tolerance.
inline double numeric_slack(double claim) { return 1e-9 * (1.0 + std::abs(claim)); }

}  // namespace detail

namespace detail {

inline Participation draw_participation(std::optional<std::size_t> nice_m, std::size_t workers,
                                        std::uint64_t seed, std::uint64_t stream,
                                        std::uint64_t sample, std::vector<char>& mask) {
  Participation part{workers, true};
  if (nice_m) {
    RngStream server(seed, static_cast<std::uint32_t>(0xFFFF0000u | (stream & 0xFFFFu)), sample,
                     StreamPurpose::kNiceSubset);
    mask = draw_nice_subset(workers, *nice_m, server);
  }
  return part;
}

inline std::optional<std::size_t> nice_size(const Family& family) {
  if (const auto* s = std::get_if<NiceSampling>(&family)) return s->m;
  if (const auto* s = std::get_if<Scaled>(&family)) return nice_size(*s->inner);
  return std::nullopt;
}

}  // namespace detail

/// Worst-case empirical relative bias and variance of `sampler` over the
/// probe set, checked against `claimed`. With nice_m set, each sample
/// draws the shared m-subset of opt.workers and the sampler acts as worker 0.
inline EstimateReport estimate_class_params(const Sampler& sampler, std::size_t d,
                                            const ClassParams& claimed,
                                            const EstimateOptions& opt = {},
                                            std::optional<std::size_t> nice_m = std::nullopt) {
  if (opt.samples < 1000) throw ConfigError("Monte Carlo estimation needs at least 1000 samples");
  EstimateReport rep;
  rep.claimed = claimed;
  rep.samples = opt.samples;
  const auto probes = make_probes(d, opt.random_probes, opt.seed);
  std::vector<double> store(opt.samples * d);
  std::vector<char> mask;
  for (std::size_t p = 0; p < probes.size(); ++p) {
    const Vector& x = probes[p];
    const double nx = linalg::sqnorm(x);
    if (nx == 0.0) {
      rep.notes.push_back("skipped zero probe " + std::to_string(p));
      continue;
    }
    ++rep.probe_count;
    std::fill(store.begin(), store.end(), 0.0);
    for (std::size_t s = 0; s < opt.samples; ++s) {
      RngStream rng(opt.seed, static_cast<std::uint32_t>(p), s, StreamPurpose::kCertify);
      Participation part = detail::draw_participation(nice_m, opt.workers, opt.seed, p, s, mask);
      if (nice_m) part.selected = mask[0] != 0;
      sampler(x, rng, part, std::span(store).subspan(s * d, d));
    }
    const auto e = detail::summarize(store, opt.samples, d, x, nx);
    rep.eta_hat = std::max(rep.eta_hat, e.eta_hat);
    rep.omega_hat = std::max(rep.omega_hat, e.omega_hat);
    rep.max_violation =
        std::max({rep.max_violation,
                  e.eta_hat - claimed.eta - opt.z * e.eta_se - detail::numeric_slack(claimed.eta),
                  e.omega_hat - claimed.omega - opt.z * e.omega_se -
                      detail::numeric_slack(claimed.omega)});
  }
  return rep;
}

/// Checks a compressor against its closed-form parameters for opt.workers.
inline EstimateReport estimate_class_params(const CompressorSpec& spec,
                                            const EstimateOptions& opt = {}) {
  validate(spec, opt.workers);
  const bool nice = detail::contains_nice(spec.family);
  const ClassParams claimed = theoretical_params(
      spec, opt.workers, nice ? Dependence::kJointNice : Dependence::kIndependent);
  EstimateReport rep =
      estimate_class_params(spec_sampler(spec), spec.dim, claimed, opt, detail::nice_size(spec.family));
  rep.name = to_string(spec);
  return rep;
}

struct OmegaAvReport {
  std::string name;
  double claimed = 0.0;
  double omega_av_hat = 0.0;
  std::size_t samples = 0;
  std::size_t probe_count = 0;
  double max_violation = -std::numeric_limits<double>::infinity();

  bool pass() const { return max_violation <= 0.0; }
};

/// Empirical sup over probe tuples of
///   E||(1/n) sum_i (C_i(x_i) - E C_i(x_i))||^2 / ((1/n) sum_i ||x_i||^2)
/// for n workers running `spec`, checked against the closed-form omega_av.
/// This is a lower estimate of the tightest constant, not the constant.
inline OmegaAvReport estimate_omega_av(const CompressorSpec& spec, std::size_t n,
                                       Dependence dep, const EstimateOptions& opt = {}) {
  if (opt.samples < 1000) throw ConfigError("Monte Carlo estimation needs at least 1000 samples");
  if (n < 1) throw ConfigError("need at least one worker");
  const ClassParams claimed = theoretical_params(spec, n, dep);
  const auto nice_m = detail::nice_size(spec.family);
  const std::size_t d = spec.dim;
  OmegaAvReport rep;
  rep.name = to_string(spec);
  rep.claimed = claimed.omega_av;
  rep.samples = opt.samples;
  const auto tuples = make_probe_tuples(d, n, opt.random_probes, opt.seed);
  std::vector<double> store(opt.samples * d);
  std::vector<char> mask;
  CompressWorkspace ws;
  SparseMessage msg;
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t p = 0; p < tuples.size(); ++p) {
    const auto& xs = tuples[p];
    double scale = 0.0;
    for (const auto& x : xs) scale += linalg::sqnorm(x);
    scale *= inv_n;
    if (scale == 0.0) continue;
    ++rep.probe_count;
    std::fill(store.begin(), store.end(), 0.0);
    for (std::size_t s = 0; s < opt.samples; ++s) {
      Participation part = detail::draw_participation(nice_m, n, opt.seed, p, s, mask);
      const std::span<double> avg = std::span(store).subspan(s * d, d);
      for (std::size_t i = 0; i < n; ++i) {
        if (nice_m) part.selected = mask[i] != 0;
        RngStream rng(opt.seed, static_cast<std::uint32_t>(p * n + i), s,
                      StreamPurpose::kCertify);
        compress_into(spec, xs[i], rng, msg, ws, part);
        accumulate(msg, inv_n, avg);
      }
    }
    const auto e = detail::summarize(store, opt.samples, d, {}, scale);
    rep.omega_av_hat = std::max(rep.omega_av_hat, e.omega_hat);
    rep.max_violation = std::max(rep.max_violation, e.omega_hat - claimed.omega_av -
                                                        opt.z * e.omega_se -
                                                        detail::numeric_slack(claimed.omega_av));
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Reference solutions
// ---------------------------------------------------------------------------

struct ReferenceOptions {
  double tol = 1e-10;
  std::size_t max_iterations = 1'000'000;
  std::optional<Vector> x0;
  /// Nonconvex: run exactly max_iterations steps and keep the lowest value.
  bool nonconvex = false;
};

struct ReferenceSolution {
  Vector x;
  double f = 0.0;
  double R = 0.0;
  std::size_t iterations = 0;
  bool converged = false;

  double objective() const { return f + R; }
};

/// Deterministic proximal gradient descent with step 1/L. Convex mode stops
/// once ||x+ - x|| / gamma <= tol; hitting the iteration cap returns the last
/// iterate with converged = false.
inline ReferenceSolution reference_solution(const Problem& problem,
                                            const ReferenceOptions& opt = {}) {
  const double L = problem.smoothness().L;
  const double gamma = 1.0 / L;
  Vector x = opt.x0 ? *opt.x0 : Vector(problem.dim(), 0.0);
  require_dim(x.size(), problem.dim(), "reference_solution x0");
  Vector step(problem.dim());
  ReferenceSolution best;
  best.x = x;
  best.f = problem.value(x);
  best.R = problem.regularizer().value(x);
  for (std::size_t it = 1; it <= opt.max_iterations; ++it) {
    const Vector g = problem.gradient(x);
    for (std::size_t c = 0; c < x.size(); ++c) step[c] = x[c] - gamma * g[c];
    Vector next = problem.prox(gamma, step);
    const double move = std::sqrt(linalg::sqdist(next, x)) / gamma;
    x = std::move(next);
    if (opt.nonconvex) {
      const double f = problem.value(x);
      if (f < best.f) {
        best.x = x;
        best.f = f;
        best.R = 0.0;
      }
      best.iterations = it;
      continue;
    }
    best.iterations = it;
    if (move <= opt.tol) {
      best.converged = true;
      break;
    }
  }
  if (!opt.nonconvex) {
    best.x = x;
    best.f = problem.value(x);
    best.R = problem.regularizer().value(x);
  } else {
    best.converged = true;
  }
  return best;
}

}  // namespace efbv
