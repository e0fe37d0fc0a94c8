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

// Synchronous simulation of EF-BV. One round:
//   d_i = C_i(grad f_i(x) - h_i),  h_i += lambda d_i        (workers)
//   d = mean_i d_i,  g = h + nu d,  h += lambda d,
//   x = prox_{gamma R}(x - gamma g)                          (server)
// EF21 is nu = lambda and DIANA is nu = 1; both run through the same code.

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "efbv/compressors.hpp"
#include "efbv/core.hpp"
#include "efbv/problems.hpp"
#include "efbv/rng.hpp"
#include "efbv/tuning.hpp"

namespace efbv {

class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(std::size_t round, double gamma, const std::string& what)
      : std::runtime_error("diverged at round " + std::to_string(round) + " (gamma = " +
                           std::to_string(gamma) + "): " + what),
        round_(round),
        gamma_(gamma) {}
  std::size_t round() const noexcept { return round_; }
  double gamma() const noexcept { return gamma_; }

 private:
  std::size_t round_;
  double gamma_;
};

enum class InitPolicy { kZeros, kLocalGradient };

struct RunConfig {
  CompressorSpec compressor;
  Dependence dependence = Dependence::kIndependent;
  /// Replaces the closed-form class parameters, e.g. omega_av = omega to
  /// model a method that does not exploit averaging.
  std::optional<ClassParams> params;
  Algorithm algorithm = Algorithm::kEFBV;
  TuneOverrides overrides;
  Mode mode = Mode::kPL;
  std::size_t rounds = 100;
  std::uint64_t seed = 0;
  InitPolicy h0 = InitPolicy::kZeros;
  std::optional<Vector> x0;
  /// Full metrics every `cadence` rounds (plus the last round).
  std::size_t cadence = 10;
  WireFormat wire;
};

struct EngineState {
  Vector x;
  std::vector<Vector> h_local;
  Vector h;
  std::size_t t = 0;
  std::uint64_t bits_total = 0;
  std::uint64_t seed = 0;
};

struct RoundRecord {
  std::size_t t = 0;
  double bits_per_node = 0.0;
  double f_gap = 0.0;
  double grad_norm_sq = 0.0;
  double lyapunov = 0.0;
  double control_residual = 0.0;
};

inline bool operator==(const RoundRecord& a, const RoundRecord& b) {
  return a.t == b.t && a.bits_per_node == b.bits_per_node && a.f_gap == b.f_gap &&
         a.grad_norm_sq == b.grad_norm_sq && a.lyapunov == b.lyapunov &&
         a.control_residual == b.control_residual;
}

struct StepResult {
  EngineState state;
  /// g^{t+1}, the server's gradient estimate used for the step.
  Vector estimate;
  std::optional<RoundRecord> record;
};

using RecordSink = std::function<void(const RoundRecord&)>;

namespace detail {

inline std::optional<std::size_t> nice_subset_size(const Family& family) {
  if (const auto* s = std::get_if<NiceSampling>(&family)) return s->m;
  if (const auto* s = std::get_if<Scaled>(&family)) return nice_subset_size(*s->inner);
  return std::nullopt;
}

constexpr double kDivergenceLimit = 1e12;
constexpr std::uint32_t kServerStream = 0xFFFFFFFFu;

}  // namespace detail

/// Psi = F(x) - F* + gamma/(2 theta) (1/n) sum_i ||grad f_i(x) - h_i||^2.
inline double lyapunov(const EngineState& state, const Problem& problem, const TuneResult& tune,
                       std::optional<double> reference_objective) {
  if (!reference_objective) {
    throw ConfigError("Lyapunov value needs the optimal objective; run reference_solution first");
  }
  Vector g(problem.dim());
  double residual = 0.0;
  for (std::size_t i = 0; i < problem.workers(); ++i) {
    problem.local_eval(i, state.x, g);
    residual += linalg::sqdist(g, state.h_local[i]);
  }
  residual /= static_cast<double>(problem.workers());
  return problem.objective(state.x) - *reference_objective + tune.lyapunov_weight() * residual;
}

class Engine {
 public:
  /// reference_objective is F* = f* + R* (or an estimate of inf f in
  /// nonconvex mode); without it records cannot be produced.
  Engine(const Problem& problem, RunConfig config,
         std::optional<double> reference_objective = std::nullopt)
      : problem_(&problem), config_(std::move(config)), reference_(reference_objective) {
    const std::size_t n = problem.workers();
    require_dim(config_.compressor.dim, problem.dim(), "compressor");
    validate(config_.compressor, n);
    if (config_.cadence < 1) throw ConfigError("metric cadence must be at least 1");
    if (problem.regularizer().kind != Regularizer::Kind::kNone && config_.mode != Mode::kKL) {
      throw ConfigError("a nonsmooth regularizer R requires KL mode");
    }
    if (config_.x0) require_dim(config_.x0->size(), problem.dim(), "x0");
    params_ = config_.params ? *config_.params
                             : theoretical_params(config_.compressor, n, config_.dependence);
    profile_ = problem.smoothness();
    tune_ = tune(params_, profile_, config_.algorithm, config_.mode, config_.overrides);
    nice_m_ = detail::nice_subset_size(config_.compressor.family);
  }

  const TuneResult& constants() const noexcept { return tune_; }
  const ClassParams& params() const noexcept { return params_; }
  const SmoothnessProfile& profile() const noexcept { return profile_; }
  const RunConfig& config() const noexcept { return config_; }

  EngineState init() const {
    const std::size_t d = problem_->dim();
    const std::size_t n = problem_->workers();
    EngineState s;
    s.x = config_.x0 ? *config_.x0 : Vector(d, 0.0);
    s.h_local.assign(n, Vector(d, 0.0));
    s.h.assign(d, 0.0);
    s.seed = config_.seed;
    if (config_.h0 == InitPolicy::kLocalGradient) {
      for (std::size_t i = 0; i < n; ++i) {
        problem_->local_eval(i, s.x, s.h_local[i]);
        linalg::axpy(1.0, s.h_local[i], s.h);
      }
      for (double& v : s.h) v /= static_cast<double>(n);
    }
    return s;
  }

  StepResult step(const EngineState& state) const {
    StepResult out{state, Vector(problem_->dim()), std::nullopt};
    RoundRecord rec;
    const bool want = state.t % config_.cadence == 0;
    advance(out.state, out.estimate, want ? &rec : nullptr);
    if (want) out.record = rec;
    return out;
  }

  /// Metrics at the current iterate; evaluates every local gradient.
  RoundRecord record(const EngineState& state) const {
    Vector g(problem_->dim());
    Vector full(problem_->dim(), 0.0);
    double f = 0.0;
    double residual = 0.0;
    for (std::size_t i = 0; i < problem_->workers(); ++i) {
      f += problem_->local_eval(i, state.x, g);
      linalg::axpy(1.0, g, full);
      residual += linalg::sqdist(g, state.h_local[i]);
    }
    return finish_record(state, state.bits_total, f, full, residual);
  }

  double lyapunov(const EngineState& state) const {
    return efbv::lyapunov(state, *problem_, tune_, reference_);
  }

  /// Runs config.rounds rounds, emitting records to sink as they are made.
  /// On divergence the records emitted so far stay with the sink.
  void run(const RecordSink& sink) const {
    EngineState state = init();
    Vector estimate(problem_->dim());
    RoundRecord rec;
    for (std::size_t r = 0; r < config_.rounds; ++r) {
      const bool want = state.t % config_.cadence == 0;
      advance(state, estimate, want ? &rec : nullptr);
      if (want) sink(rec);
    }
    sink(record(state));
  }

  std::vector<RoundRecord> run() const {
    std::vector<RoundRecord> out;
    run([&](const RoundRecord& r) { out.push_back(r); });
    return out;
  }

 private:
  RoundRecord finish_record(const EngineState& state, std::uint64_t bits, double f_sum,
                            Vector& grad_sum, double residual_sum) const {
    if (!reference_) {
      throw ConfigError("round records need the optimal objective; run reference_solution first");
    }
    const double n = static_cast<double>(problem_->workers());
    RoundRecord rec;
    rec.t = state.t;
    rec.bits_per_node = static_cast<double>(bits) / n;
    const double objective = f_sum / n + problem_->regularizer().value(state.x);
    rec.f_gap = objective - *reference_;
    for (double& v : grad_sum) v /= n;
    rec.grad_norm_sq = linalg::sqnorm(grad_sum);
    rec.control_residual = residual_sum / n;
    rec.lyapunov = rec.f_gap + tune_.lyapunov_weight() * rec.control_residual;
    if (!std::isfinite(rec.f_gap) || rec.f_gap > detail::kDivergenceLimit) {
      throw DivergenceError(state.t, tune_.gamma, "objective gap " + std::to_string(rec.f_gap));
    }
    return rec;
  }

  void advance(EngineState& s, Vector& estimate, RoundRecord* rec) const {
    const std::size_t d = problem_->dim();
    const std::size_t n = problem_->workers();
    std::vector<char> members;
    if (nice_m_) {
      RngStream server(s.seed, detail::kServerStream, s.t, StreamPurpose::kNiceSubset);
      members = draw_nice_subset(n, *nice_m_, server);
    }
    grad_.resize(d);
    diff_.resize(d);
    dsum_.assign(d, 0.0);
    Vector full;
    double f_sum = 0.0;
    double residual_sum = 0.0;
    const std::uint64_t bits_before = s.bits_total;
    if (rec) full.assign(d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const double fi = problem_->local_eval(i, s.x, grad_);
      Vector& hi = s.h_local[i];
      for (std::size_t c = 0; c < d; ++c) diff_[c] = grad_[c] - hi[c];
      if (rec) {
        f_sum += fi;
        linalg::axpy(1.0, grad_, full);
        residual_sum += linalg::sqnorm(diff_);
      }
      RngStream rng(s.seed, static_cast<std::uint32_t>(i), s.t, StreamPurpose::kCompress);
      const Participation part{n, members.empty() || members[i] != 0};
      compress_into(config_.compressor, diff_, rng, msg_, ws_, part, config_.wire);
      s.bits_total += msg_.wire_bits;
      accumulate(msg_, 1.0, dsum_);
      accumulate(msg_, tune_.lambda, hi);
    }
    if (rec) *rec = finish_record(s, bits_before, f_sum, full, residual_sum);

    const double inv_n = 1.0 / static_cast<double>(n);
    estimate.resize(d);
    for (std::size_t c = 0; c < d; ++c) {
      const double dc = dsum_[c] * inv_n;
      estimate[c] = s.h[c] + tune_.nu * dc;
      s.h[c] = s.h[c] + tune_.lambda * dc;
    }
    for (std::size_t c = 0; c < d; ++c) diff_[c] = s.x[c] - tune_.gamma * estimate[c];
    s.x = problem_->prox(tune_.gamma, diff_);
    ++s.t;
    if (!linalg::all_finite(s.x) || linalg::norm(s.x) > detail::kDivergenceLimit) {
      throw DivergenceError(s.t, tune_.gamma, "iterate left the finite range");
    }
  }

  const Problem* problem_;
  RunConfig config_;
  std::optional<double> reference_;
  ClassParams params_;
  SmoothnessProfile profile_;
  TuneResult tune_;
  std::optional<std::size_t> nice_m_;

  // Scratch reused across rounds; an Engine is not shared between threads.
  mutable Vector grad_;
  mutable Vector diff_;
  mutable Vector dsum_;
  mutable SparseMessage msg_;
  mutable CompressWorkspace ws_;
};

}  // namespace efbv
