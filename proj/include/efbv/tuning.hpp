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

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "efbv/compressors.hpp"
#include "efbv/core.hpp"

namespace efbv {

/// PL: R = 0 and f satisfies the Polyak-Lojasiewicz inequality.
/// KL: composite f + R under the Kurdyka-Lojasiewicz inequality.
/// Nonconvex: R = 0, no curvature assumption, sublinear guarantee only.
enum class Mode { kPL, kKL, kNonconvex };

enum class Algorithm { kEFBV, kEF21, kDIANA };

inline const char* to_string(Mode m) {
  switch (m) {
    case Mode::kPL: return "pl";
    case Mode::kKL: return "kl";
    case Mode::kNonconvex: return "nonconvex";
  }
  return "?";
}

inline const char* to_string(Algorithm a) {
  switch (a) {
    case Algorithm::kEFBV: return "ef_bv";
    case Algorithm::kEF21: return "ef21";
    case Algorithm::kDIANA: return "diana";
  }
  return "?";
}

struct SmoothnessProfile {
  std::vector<double> L_list;
  double L_tilde = 0.0;
  double L = 0.0;
  double mu = 0.0;
};

/// Builds a profile from per-node constants with L = L_tilde.
inline SmoothnessProfile make_profile(std::vector<double> L_list, double mu) {
  if (L_list.empty()) throw ConfigError("smoothness profile needs at least one node");
  double sq = 0.0;
  for (double l : L_list) {
    if (!(l > 0.0)) throw ConfigError("smoothness constants must be positive");
    sq += l * l;
  }
  SmoothnessProfile p;
  p.L_tilde = std::sqrt(sq / static_cast<double>(L_list.size()));
  p.L = p.L_tilde;
  p.mu = mu;
  p.L_list = std::move(L_list);
  return p;
}

/// Scale minimizing the averaged residual (same form as lambda_star).
inline double nu_star(double eta, double omega_av) { return lambda_star(eta, omega_av); }

struct RateConstants {
  double s = 0.0;
  double theta = 0.0;
};

namespace detail {

// sqrt(r) * s, well defined at r = 0.
inline double root_r_times_s(double r, Mode mode) {
  if (mode == Mode::kNonconvex) return 1.0 - std::sqrt(r);
  return std::sqrt((1.0 + r) / 2.0) - std::sqrt(r);
}

// sqrt(r) * (1 + s); (1+s)^2 r is (r+1)/2 resp. 1.
inline double root_r_times_one_plus_s(double r, Mode mode) {
  if (mode == Mode::kNonconvex) return 1.0;
  return std::sqrt((1.0 + r) / 2.0);
}

}  // namespace detail

/// s and theta for the Lyapunov analysis. r_av = 0 gives theta = +inf, i.e.
/// the control-variate term of the Lyapunov function drops out.
inline RateConstants rate_constants(double r, double r_av, Mode mode) {
  if (!(r >= 0.0 && r < 1.0)) throw ConfigError("rate constants need 0 <= r < 1");
  if (!(r_av >= 0.0)) throw ConfigError("rate constants need r_av >= 0");
  RateConstants out;
  if (mode == Mode::kNonconvex) {
    out.s = r > 0.0 ? 1.0 / std::sqrt(r) - 1.0 : std::numeric_limits<double>::infinity();
  } else {
    out.s = r > 0.0 ? std::sqrt((1.0 + r) / (2.0 * r)) - 1.0
                    : std::numeric_limits<double>::infinity();
  }
  if (r_av == 0.0) {
    out.theta = std::numeric_limits<double>::infinity();
  } else {
    out.theta = detail::root_r_times_s(r, mode) * detail::root_r_times_one_plus_s(r, mode) / r_av;
  }
  return out;
}

/// sqrt(r_av / r) / s, the stochastic penalty multiplying L_tilde in every
/// step-size bound. Evaluated as sqrt(r_av) / (sqrt(r) s) so r = 0 is safe.
inline double step_penalty(double r, double r_av, Mode mode) {
  if (r_av == 0.0) return 0.0;
  return std::sqrt(r_av) / detail::root_r_times_s(r, mode);
}

/// Largest step size covered by the convergence theorem of the given mode:
/// 1 / (c L + L_tilde sqrt(r_av / r) / s) with c = 2 under KL, 1 otherwise.
inline double gamma_max(const SmoothnessProfile& profile, double r, double r_av, double s,
                        Mode mode) {
  if (!(profile.L > 0.0)) throw ConfigError("gamma_max needs L > 0");
  if (!(r >= 0.0 && r < 1.0)) throw ConfigError("gamma_max needs 0 <= r < 1");
  double penalty = 0.0;
  if (r_av > 0.0) {
    penalty = (r > 0.0 && std::isfinite(s)) ? std::sqrt(r_av / r) / s
                                             : step_penalty(r, r_av, mode);
  }
  const double smooth = mode == Mode::kKL ? 2.0 * profile.L : profile.L;
  return 1.0 / (smooth + profile.L_tilde * penalty);
}

/// Guaranteed per-round contraction of E[Psi].
inline double rate_factor(double gamma, double mu, double r, Mode mode) {
  if (!(gamma > 0.0 && mu > 0.0)) throw ConfigError("rate_factor needs gamma > 0, mu > 0");
  if (!(r < 1.0)) throw ConfigError("rate_factor needs r < 1");
  const double tail = (r + 1.0) / 2.0;
  switch (mode) {
    case Mode::kPL: return std::max(1.0 - gamma * mu, tail);
    case Mode::kKL: return std::max(1.0 / (1.0 + 0.5 * gamma * mu), tail);
    case Mode::kNonconvex: break;
  }
  throw ConfigError("nonconvex mode has no linear rate");
}

struct TuneOverrides {
  std::optional<double> lambda;
  std::optional<double> nu;
  std::optional<double> gamma;
};

struct TuneResult {
  Algorithm algorithm = Algorithm::kEFBV;
  Mode mode = Mode::kPL;
  ClassParams params;
  double lambda = 1.0;
  double nu = 1.0;
  double r = 0.0;
  double r_av = 0.0;
  double s = 0.0;
  double theta = 0.0;
  double gamma_bound = 0.0;
  double gamma = 0.0;
  std::optional<double> rate;
  bool gamma_clamped = false;

  double sqrt_rav_over_r() const {
    if (r_av == 0.0) return 0.0;
    return std::sqrt(r_av / r);
  }
  /// Coefficient gamma / (2 theta) of the control-variate term in Psi.
  double lyapunov_weight() const {
    return std::isinf(theta) ? 0.0 : gamma / (2.0 * theta);
  }
};

/// Scaling parameters and residual factors, without any step-size
/// information. Usable when no smoothness profile is known.
inline TuneResult tune_scalings(const ClassParams& params, Algorithm algorithm, Mode mode,
                                const TuneOverrides& over = {}) {
  TuneResult t;
  t.algorithm = algorithm;
  t.mode = mode;
  t.params = params;
  auto check_scale = [](double v, const char* name) {
    if (!(v > 0.0 && v <= 1.0))
      throw ConfigError(std::string(name) + " must lie in (0,1], got " + std::to_string(v));
    return v;
  };
  t.lambda = over.lambda ? check_scale(*over.lambda, "lambda")
                         : lambda_star(params.eta, params.omega);
  t.r = residual_factor(t.lambda, params.eta, params.omega);
  switch (algorithm) {
    case Algorithm::kEFBV:
      t.nu = over.nu ? check_scale(*over.nu, "nu") : nu_star(params.eta, params.omega_av);
      t.r_av = residual_factor(t.nu, params.eta, params.omega_av);
      break;
    case Algorithm::kEF21:
      if (over.nu && *over.nu != t.lambda) throw ConfigError("EF21 requires nu = lambda");
      t.nu = t.lambda;
      // No knowledge of omega_av: the averaged residual is taken equal to r.
      t.r_av = t.r;
      break;
    case Algorithm::kDIANA:
      if (over.nu && *over.nu != 1.0) throw ConfigError("DIANA requires nu = 1");
      t.nu = 1.0;
      t.r_av = params.eta * params.eta + params.omega_av;
      break;
  }
  if (!(t.r < 1.0)) {
    throw ConfigError("lambda = " + std::to_string(t.lambda) + " gives r = " +
                      std::to_string(t.r) +
                      "; the convergence theorems require r < 1 (lambda * C contractive)");
  }
  const RateConstants rc = rate_constants(t.r, t.r_av, mode);
  t.s = rc.s;
  t.theta = rc.theta;
  return t;
}

/// Full configuration: scalings, the step-size bound and the guaranteed
/// rate. A user step size above the bound is clamped to it.
inline TuneResult tune(const ClassParams& params, const SmoothnessProfile& profile,
                       Algorithm algorithm, Mode mode, const TuneOverrides& over = {}) {
  TuneResult t = tune_scalings(params, algorithm, mode, over);
  t.gamma_bound = gamma_max(profile, t.r, t.r_av, t.s, mode);
  t.gamma = t.gamma_bound;
  if (over.gamma) {
    if (!(*over.gamma > 0.0)) throw ConfigError("gamma must be positive");
    if (*over.gamma > t.gamma_bound) {
      t.gamma_clamped = true;
    } else {
      t.gamma = *over.gamma;
    }
  }
  if (mode != Mode::kNonconvex && profile.mu > 0.0) {
    t.rate = rate_factor(t.gamma, profile.mu, t.r, mode);
  }
  return t;
}

}  // namespace efbv
