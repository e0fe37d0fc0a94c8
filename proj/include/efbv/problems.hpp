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

// Distributed logistic-regression objectives: dataset ingestion (LibSVM
// text), synthetic data, sharding over workers, local values/gradients,
// smoothness constants and proximity operators.

#include <charconv>
#include <cmath>
#include <cstdio>
#include <istream>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "efbv/core.hpp"
#include "efbv/rng.hpp"
#include "efbv/tuning.hpp"

namespace efbv {

/// Dense row-major features with labels in {-1, +1}.
struct Dataset {
  std::size_t rows = 0;
  std::size_t dim = 0;
  std::vector<double> features;
  std::vector<double> labels;

  std::span<const double> row(std::size_t j) const {
    return std::span(features).subspan(j * dim, dim);
  }
};

inline bool operator==(const Dataset& a, const Dataset& b) {
  return a.rows == b.rows && a.dim == b.dim && a.features == b.features && a.labels == b.labels;
}

// ---------------------------------------------------------------------------
// LibSVM text format
// ---------------------------------------------------------------------------

namespace detail {

inline double parse_double(std::string_view tok, std::size_t line, const char* what) {
  // from_chars for double needs GCC 11+
  double v = 0.0;
  const char* first = tok.data();
  const char* last = tok.data() + tok.size();
  if (!tok.empty() && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || first == last) {
    throw ParseError(line, std::string("malformed ") + what + " '" + std::string(tok) + "'");
  }
  return v;
}

inline double map_label(double raw, std::size_t line) {
  if (raw == 1.0) return 1.0;
  if (raw == -1.0 || raw == 0.0) return -1.0;
  throw ParseError(line, "unknown label value " + std::to_string(raw));
}

}  // namespace detail

/// Reads `label idx:val ...` lines (1-based, strictly increasing indices).
/// dim_override = 0 uses the largest index seen. Blank lines are skipped.
inline Dataset parse_libsvm(std::istream& in, std::size_t dim_override = 0) {
  struct Entry {
    std::size_t idx;
    double val;
  };
  std::vector<std::vector<Entry>> rows;
  std::vector<double> labels;
  std::size_t max_index = 0;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::string_view rest(line);
    auto next_token = [&]() -> std::string_view {
      const auto start = rest.find_first_not_of(" \t");
      if (start == std::string_view::npos) {
        rest = {};
        return {};
      }
      rest.remove_prefix(start);
      const auto end = rest.find_first_of(" \t");
      const std::string_view tok = rest.substr(0, end);
      rest.remove_prefix(end == std::string_view::npos ? rest.size() : end);
      return tok;
    };
    const std::string_view label_tok = next_token();
    if (label_tok.empty()) continue;
    labels.push_back(detail::map_label(detail::parse_double(label_tok, lineno, "label"), lineno));
    auto& entries = rows.emplace_back();
    std::size_t prev = 0;
    for (std::string_view tok = next_token(); !tok.empty(); tok = next_token()) {
      const auto colon = tok.find(':');
      if (colon == std::string_view::npos || colon == 0) {
        throw ParseError(lineno, "malformed feature '" + std::string(tok) + "'");
      }
      const std::string_view idx_tok = tok.substr(0, colon);
      std::size_t idx = 0;
      const auto [ptr, ec] = std::from_chars(idx_tok.data(), idx_tok.data() + idx_tok.size(), idx);
      if (ec != std::errc() || ptr != idx_tok.data() + idx_tok.size() || idx == 0) {
        throw ParseError(lineno, "malformed index '" + std::string(idx_tok) + "'");
      }
      if (idx <= prev) throw ParseError(lineno, "indices must be strictly increasing");
      prev = idx;
      const double val = detail::parse_double(tok.substr(colon + 1), lineno, "value");
      if (!std::isfinite(val)) throw ParseError(lineno, "non-finite feature value");
      if (dim_override != 0 && idx > dim_override) {
        throw ParseError(lineno, "index " + std::to_string(idx) + " exceeds dimension " +
                                     std::to_string(dim_override));
      }
      max_index = std::max(max_index, idx);
      entries.push_back({idx, val});
    }
  }
  if (rows.empty()) throw ParseError(lineno, "dataset has no rows");
  Dataset ds;
  ds.rows = rows.size();
  ds.dim = dim_override != 0 ? dim_override : max_index;
  if (ds.dim == 0) throw ParseError(lineno, "dataset has no features; pass an explicit dimension");
  ds.features.assign(ds.rows * ds.dim, 0.0);
  for (std::size_t j = 0; j < rows.size(); ++j) {
    for (const Entry& e : rows[j]) ds.features[j * ds.dim + e.idx - 1] = e.val;
  }
  ds.labels = std::move(labels);
  return ds;
}

/// Writes nonzero features with 17 significant digits.
inline void write_libsvm(std::ostream& out, const Dataset& ds) {
  char buf[64];
  for (std::size_t j = 0; j < ds.rows; ++j) {
    out << (ds.labels[j] > 0 ? "+1" : "-1");
    const auto row = ds.row(j);
    for (std::size_t c = 0; c < ds.dim; ++c) {
      if (row[c] == 0.0) continue;
      std::snprintf(buf, sizeof buf, " %zu:%.17g", c + 1, row[c]);
      out << buf;
    }
    out << '\n';
  }
}

/// N points with standard Gaussian features shifted by label * separation in
/// every coordinate, the whole row divided by sqrt(d) so that ||a||^2 stays
/// O(1 + separation^2). Labels are fair coin flips.
inline Dataset synth_dataset(std::uint64_t seed, std::size_t dim, std::size_t rows,
                             double separation) {
  if (dim < 1 || rows < 2) throw ConfigError("synthetic data needs d >= 1 and N >= 2");
  RngStream rng(seed, 0, 0, StreamPurpose::kSynthetic);
  Dataset ds;
  ds.rows = rows;
  ds.dim = dim;
  ds.features.resize(rows * dim);
  ds.labels.resize(rows);
  const double unit = 1.0 / std::sqrt(static_cast<double>(dim));
  for (std::size_t j = 0; j < rows; ++j) {
    const double b = rng.uniform() < 0.5 ? -1.0 : 1.0;
    ds.labels[j] = b;
    for (std::size_t c = 0; c < dim; ++c) {
      ds.features[j * dim + c] = (rng.normal() + b * separation) * unit;
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Sharding
// ---------------------------------------------------------------------------

struct Shard {
  std::size_t owner = 0;
  std::vector<std::size_t> rows;
};

/// Shuffles the rows, cuts n blocks of floor(N/n) rows, and gives node i
/// block i (and block i+1 mod n when overlap = 2). Leftover rows go to the
/// last node once.
inline std::vector<Shard> partition(const Dataset& ds, std::size_t n, int overlap,
                                    std::uint64_t seed) {
  if (n < 1) throw ConfigError("need at least one worker");
  if (n > ds.rows) {
    throw ConfigError("cannot split " + std::to_string(ds.rows) + " rows over " +
                      std::to_string(n) + " workers");
  }
  if (overlap != 1 && overlap != 2) throw ConfigError("overlap must be 1 or 2");
  if (overlap == 2 && n < 2) throw ConfigError("overlap 2 needs at least two workers");
  std::vector<std::size_t> perm(ds.rows);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  RngStream rng(seed, 0, 0, StreamPurpose::kPartition);
  for (std::size_t j = ds.rows - 1; j > 0; --j) {
    std::swap(perm[j], perm[static_cast<std::size_t>(rng.below(j + 1))]);
  }
  const std::size_t block = ds.rows / n;
  auto block_rows = [&](std::size_t b) {
    return std::span(perm).subspan(b * block, block);
  };
  std::vector<Shard> shards(n);
  for (std::size_t i = 0; i < n; ++i) {
    shards[i].owner = i;
    const auto first = block_rows(i);
    shards[i].rows.assign(first.begin(), first.end());
    if (overlap == 2) {
      const auto second = block_rows((i + 1) % n);
      shards[i].rows.insert(shards[i].rows.end(), second.begin(), second.end());
    }
  }
  shards.back().rows.insert(shards.back().rows.end(),
                            perm.begin() + static_cast<std::ptrdiff_t>(n * block), perm.end());
  return shards;
}

// ---------------------------------------------------------------------------
// Objective
// ---------------------------------------------------------------------------

/// The nonsmooth part R of the composite objective.
struct Regularizer {
  enum class Kind { kNone, kL1 };
  Kind kind = Kind::kNone;
  double weight = 0.0;

  static Regularizer none() { return {}; }
  static Regularizer l1(double w) { return {Kind::kL1, w}; }

  double value(std::span<const double> x) const {
    if (kind == Kind::kNone) return 0.0;
    double s = 0.0;
    for (double v : x) s += std::abs(v);
    return weight * s;
  }
};

/// argmin_y gamma R(y) + 0.5 ||v - y||^2.
inline Vector prox(const Regularizer& reg, double gamma, std::span<const double> v) {
  if (!(gamma > 0.0)) throw ConfigError("prox needs gamma > 0");
  Vector out(v.begin(), v.end());
  switch (reg.kind) {
    case Regularizer::Kind::kNone:
      return out;
    case Regularizer::Kind::kL1: {
      const double t = gamma * reg.weight;
      for (double& y : out) {
        if (y > t) {
          y -= t;
        } else if (y < -t) {
          y += t;
        } else {
          y = 0.0;
        }
      }
      return out;
    }
  }
  throw ConfigError("unsupported regularizer");
}

struct ProblemOptions {
  /// Strong-convexity term mu/2 ||x||^2 folded into every f_i; also the PL/KL
  /// constant handed to the tuner.
  double mu = 0.1;
  /// Weight of sum_j x_j^2 / (1 + x_j^2) folded into every f_i.
  double nonconvex_weight = 0.0;
  Regularizer regularizer;
  /// L_tilde = sqrt(sum L_i^2) instead of sqrt(mean L_i^2).
  bool appendix_L = false;
};

namespace detail {

// log(1 + exp(-z))
inline double softplus_neg(double z) {
  return z > 0.0 ? std::log1p(std::exp(-z)) : -z + std::log1p(std::exp(z));
}

// 1 / (1 + exp(z))
inline double sigmoid_neg(double z) {
  if (z >= 0.0) {
    const double e = std::exp(-z);
    return e / (1.0 + e);
  }
  return 1.0 / (1.0 + std::exp(z));
}

}  // namespace detail

/// f = (1/n) sum_i f_i with
///   f_i(x) = (1/N_i) sum_j log(1 + exp(-b_j a_j^T x)) + mu/2 ||x||^2
///            + w sum_c x_c^2 / (1 + x_c^2),
/// plus the nonsmooth R.
class Problem {
 public:
  Problem(const Dataset& ds, std::vector<Shard> shards, ProblemOptions opts = {})
      : dim_(ds.dim), opts_(opts), sizes_(shards.size()) {
    if (shards.empty()) throw ConfigError("problem needs at least one shard");
    if (opts.mu < 0.0 || opts.nonconvex_weight < 0.0 || opts.regularizer.weight < 0.0)
      throw ConfigError("regularization weights must be nonnegative");
    local_.resize(shards.size());
    for (std::size_t i = 0; i < shards.size(); ++i) {
      const auto& rows = shards[i].rows;
      if (rows.empty()) throw ConfigError("shard " + std::to_string(i) + " is empty");
      auto& loc = local_[i];
      loc.features.reserve(rows.size() * dim_);
      for (std::size_t r : rows) {
        if (r >= ds.rows) throw ConfigError("shard row out of range");
        const auto src = ds.row(r);
        loc.features.insert(loc.features.end(), src.begin(), src.end());
        loc.labels.push_back(ds.labels[r]);
      }
      sizes_[i] = rows.size();
    }
  }

  std::size_t dim() const noexcept { return dim_; }
  std::size_t workers() const noexcept { return local_.size(); }
  std::size_t shard_size(std::size_t i) const { return sizes_.at(i); }
  const ProblemOptions& options() const noexcept { return opts_; }
  const Regularizer& regularizer() const noexcept { return opts_.regularizer; }

  /// f_i(x); when grad is nonempty it receives grad f_i(x).
  double local_eval(std::size_t i, std::span<const double> x, std::span<double> grad) const {
    require_dim(x.size(), dim_, "local_eval");
    const Local& loc = local_.at(i);
    const bool want_grad = !grad.empty();
    if (want_grad) {
      require_dim(grad.size(), dim_, "local_eval gradient");
      std::fill(grad.begin(), grad.end(), 0.0);
    }
    const std::size_t rows = loc.labels.size();
    double loss = 0.0;
    for (std::size_t j = 0; j < rows; ++j) {
      const std::span<const double> a(loc.features.data() + j * dim_, dim_);
      const double b = loc.labels[j];
      const double z = b * linalg::dot(a, x);
      loss += detail::softplus_neg(z);
      if (want_grad) linalg::axpy(-b * detail::sigmoid_neg(z), a, grad);
    }
    const double inv = 1.0 / static_cast<double>(rows);
    loss *= inv;
    if (want_grad) {
      for (double& g : grad) g *= inv;
    }
    loss += 0.5 * opts_.mu * linalg::sqnorm(x);
    if (want_grad) linalg::axpy(opts_.mu, x, grad);
    if (opts_.nonconvex_weight > 0.0) {
      const double w = opts_.nonconvex_weight;
      for (std::size_t c = 0; c < dim_; ++c) {
        const double q = 1.0 + x[c] * x[c];
        loss += w * x[c] * x[c] / q;
        if (want_grad) grad[c] += w * 2.0 * x[c] / (q * q);
      }
    }
    if (!std::isfinite(loss) || (want_grad && !linalg::all_finite(grad))) {
      throw InternalError("non-finite value in local objective of worker " + std::to_string(i));
    }
    return loss;
  }

  double local_value(std::size_t i, std::span<const double> x) const {
    return local_eval(i, x, {});
  }

  Vector local_gradient(std::size_t i, std::span<const double> x) const {
    Vector g(dim_);
    local_eval(i, x, g);
    return g;
  }

  /// f(x) = (1/n) sum_i f_i(x).
  double value(std::span<const double> x) const {
    double s = 0.0;
    for (std::size_t i = 0; i < workers(); ++i) s += local_value(i, x);
    return s / static_cast<double>(workers());
  }

  Vector gradient(std::span<const double> x) const {
    Vector g(dim_, 0.0), gi(dim_);
    for (std::size_t i = 0; i < workers(); ++i) {
      local_eval(i, x, gi);
      linalg::axpy(1.0, gi, g);
    }
    for (double& v : g) v /= static_cast<double>(workers());
    return g;
  }

  /// f(x) + R(x).
  double objective(std::span<const double> x) const {
    return value(x) + opts_.regularizer.value(x);
  }

  Vector prox(double gamma, std::span<const double> v) const {
    return efbv::prox(opts_.regularizer, gamma, v);
  }

  /// L_i = mu + (1/(4 N_i)) sum_j ||a_j||^2 + 2 w; the last term bounds the
  /// curvature of the nonconvex penalty, |d^2/dx^2 x^2/(1+x^2)| <= 2.
  SmoothnessProfile smoothness() const {
    std::vector<double> L(workers());
    for (std::size_t i = 0; i < workers(); ++i) {
      const Local& loc = local_[i];
      const double sq = linalg::sqnorm(loc.features);
      L[i] = opts_.mu + sq / (4.0 * static_cast<double>(loc.labels.size())) +
             2.0 * opts_.nonconvex_weight;
    }
    SmoothnessProfile p = make_profile(std::move(L), opts_.mu);
    if (opts_.appendix_L) {
      p.L_tilde *= std::sqrt(static_cast<double>(workers()));
      p.L = p.L_tilde;
    }
    return p;
  }

 private:
  struct Local {
    std::vector<double> features;
    std::vector<double> labels;
  };

  std::size_t dim_;
  ProblemOptions opts_;
  std::vector<std::size_t> sizes_;
  std::vector<Local> local_;
};

}  // namespace efbv
