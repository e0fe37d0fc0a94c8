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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <variant>
#include <vector>

#include "efbv/core.hpp"
#include "efbv/rng.hpp"

namespace efbv {

// ---------------------------------------------------------------------------
// Compressor families
// ---------------------------------------------------------------------------

struct Identity {};

/// Keeps k uniformly chosen coordinates, multiplied by d/k.
struct RandK {
  std::size_t k = 1;
};

/// Keeps the k largest-magnitude coordinates verbatim. Ties go to the lower
/// index.
struct TopK {
  std::size_t k = 1;
};

/// top-k plus k' uniformly chosen coordinates among the rest, all verbatim.
struct Mix {
  std::size_t k = 1;
  std::size_t k_prime = 1;
};

/// k uniformly chosen coordinates among the top-k', multiplied by k'/k.
struct Comp {
  std::size_t k = 1;
  std::size_t k_prime = 1;
};

/// Partial participation: worker sends (n/m) x if it belongs to the round's
/// shared m-subset, nothing otherwise. The subset is drawn by the caller.
struct NiceSampling {
  std::size_t m = 1;
};

struct Scaled;

using Family = std::variant<Identity, RandK, TopK, Mix, Comp, NiceSampling, Scaled>;

/// lambda * inner. The inner message goes on the wire unscaled; the receiver
/// applies lambda.
struct Scaled {
  std::shared_ptr<const Family> inner;
  double lambda = 1.0;
};

struct CompressorSpec {
  Family family;
  std::size_t dim = 0;
};

inline CompressorSpec scaled(const CompressorSpec& inner, double lambda) {
  return {Scaled{std::make_shared<const Family>(inner.family), lambda}, inner.dim};
}

namespace detail {
template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;
}  // namespace detail

inline std::string to_string(const Family& family) {
  return std::visit(
      detail::overloaded{
          [](const Identity&) -> std::string { return "identity"; },
          [](const RandK& c) { return "rand-" + std::to_string(c.k); },
          [](const TopK& c) { return "top-" + std::to_string(c.k); },
          [](const Mix& c) {
            return "mix-(" + std::to_string(c.k) + "," + std::to_string(c.k_prime) + ")";
          },
          [](const Comp& c) {
            return "comp-(" + std::to_string(c.k) + "," + std::to_string(c.k_prime) + ")";
          },
          [](const NiceSampling& c) { return "nice-" + std::to_string(c.m); },
          [](const Scaled& c) {
            std::ostringstream os;
            os.precision(6);
            os << c.lambda << "*" << to_string(*c.inner);
            return os.str();
          },
      },
      family);
}

inline std::string to_string(const CompressorSpec& spec) { return to_string(spec.family); }

inline void validate(const Family& family, std::size_t d, std::size_t n) {
  auto fail = [&](const std::string& why) {
    throw ConfigError("invalid compressor " + to_string(family) + " for d=" +
                      std::to_string(d) + ": " + why);
  };
  if (d == 0) fail("dimension must be positive");
  std::visit(detail::overloaded{
                 [](const Identity&) {},
                 [&](const RandK& c) {
                   if (c.k < 1 || c.k > d) fail("need 1 <= k <= d");
                 },
                 [&](const TopK& c) {
                   if (c.k < 1 || c.k > d) fail("need 1 <= k <= d");
                 },
                 [&](const Mix& c) {
                   if (c.k < 1 || c.k_prime < 1 || c.k + c.k_prime > d)
                     fail("need k >= 1, k' >= 1, k + k' <= d");
                 },
                 [&](const Comp& c) {
                   if (c.k < 1 || c.k > c.k_prime || c.k_prime > d)
                     fail("need 1 <= k <= k' <= d");
                 },
                 [&](const NiceSampling& c) {
                   if (c.m < 1 || c.m > n) fail("need 1 <= m <= n (n=" + std::to_string(n) + ")");
                 },
                 [&](const Scaled& c) {
                   if (!c.inner) fail("scaled compressor without inner");
                   if (!(c.lambda > 0.0 && c.lambda <= 1.0)) fail("need lambda in (0,1]");
                   validate(*c.inner, d, n);
                 },
             },
             family);
}

/// n is the worker count; it only matters for NiceSampling.
inline void validate(const CompressorSpec& spec, std::size_t n = 1) {
  validate(spec.family, spec.dim, n);
}

/// Parses the command-line form: identity | randk:K | topk:K | mix:K,K' |
/// comp:K,K' | nice:M | scaled:LAMBDA:<inner>.
inline CompressorSpec parse_compressor(std::string_view text, std::size_t dim) {
  auto bad = [&]() -> ConfigError {
    return ConfigError("cannot parse compressor '" + std::string(text) + "'");
  };
  auto parse_size = [&](std::string_view s) -> std::size_t {
    if (s.empty()) throw bad();
    std::size_t v = 0;
    for (char ch : s) {
      if (ch < '0' || ch > '9') throw bad();
      v = v * 10 + static_cast<std::size_t>(ch - '0');
    }
    return v;
  };
  auto parse_pair = [&](std::string_view s) {
    const auto comma = s.find(',');
    if (comma == std::string_view::npos) throw bad();
    return std::pair{parse_size(s.substr(0, comma)), parse_size(s.substr(comma + 1))};
  };
  const auto colon = text.find(':');
  const std::string_view head = text.substr(0, colon);
  const std::string_view rest =
      colon == std::string_view::npos ? std::string_view{} : text.substr(colon + 1);
  if (head == "identity" && rest.empty()) return {Identity{}, dim};
  if (head == "randk") return {RandK{parse_size(rest)}, dim};
  if (head == "topk") return {TopK{parse_size(rest)}, dim};
  if (head == "nice") return {NiceSampling{parse_size(rest)}, dim};
  if (head == "mix") {
    const auto [k, kp] = parse_pair(rest);
    return {Mix{k, kp}, dim};
  }
  if (head == "comp") {
    const auto [k, kp] = parse_pair(rest);
    return {Comp{k, kp}, dim};
  }
  if (head == "scaled") {
    const auto colon2 = rest.find(':');
    if (colon2 == std::string_view::npos) throw bad();
    double lambda = 0.0;
    try {
      std::size_t used = 0;
      const std::string num(rest.substr(0, colon2));
      lambda = std::stod(num, &used);
      if (used != num.size()) throw bad();
    } catch (const std::logic_error&) {
      throw bad();
    }
    return scaled(parse_compressor(rest.substr(colon2 + 1), dim), lambda);
  }
  throw bad();
}

// ---------------------------------------------------------------------------
// Messages
// ---------------------------------------------------------------------------

struct WireFormat {
  std::uint64_t bits_per_coordinate = 64;  // 32-bit index + 32-bit value
};

/// Compressed payload: sorted (index, value) pairs plus a receiver-side
/// scale factor. Decoded value of entry j is scale * values[j].
struct SparseMessage {
  std::size_t dim = 0;
  std::vector<std::uint32_t> indices;
  std::vector<double> values;
  double scale = 1.0;
  std::uint64_t wire_bits = 0;

  std::size_t size() const noexcept { return indices.size(); }
  bool empty() const noexcept { return indices.empty(); }
};

inline Vector densify(const SparseMessage& msg) {
  Vector out(msg.dim, 0.0);
  for (std::size_t j = 0; j < msg.indices.size(); ++j)
    out[msg.indices[j]] = msg.scale * msg.values[j];
  return out;
}

/// out += alpha * decoded(msg)
inline void accumulate(const SparseMessage& msg, double alpha, std::span<double> out) {
  const double a = alpha * msg.scale;
  for (std::size_t j = 0; j < msg.indices.size(); ++j) out[msg.indices[j]] += a * msg.values[j];
}

/// Nonzero coordinates of x as a message with unit scale.
inline SparseMessage sparsify(std::span<const double> x, WireFormat wire = {}) {
  SparseMessage msg;
  msg.dim = x.size();
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] != 0.0) {
      msg.indices.push_back(static_cast<std::uint32_t>(i));
      msg.values.push_back(x[i]);
    }
  }
  msg.wire_bits = msg.indices.size() * wire.bits_per_coordinate;
  return msg;
}

// ---------------------------------------------------------------------------
// Compression
// ---------------------------------------------------------------------------

/// Round-shared information a worker's compressor needs. Only NiceSampling
/// reads it.
struct Participation {
  std::size_t workers = 1;
  bool selected = true;
};

/// Scratch buffers reused across calls in hot loops.
struct CompressWorkspace {
  std::vector<std::uint32_t> order;
  std::vector<std::uint32_t> pool;
  std::vector<std::uint32_t> picked;
};

/// Draws the round's m-subset of workers. Returns a membership mask.
inline std::vector<char> draw_nice_subset(std::size_t n, std::size_t m, RngStream& rng) {
  if (m < 1 || m > n) throw ConfigError("nice sampling needs 1 <= m <= n");
  std::vector<std::uint32_t> ids(n);
  std::iota(ids.begin(), ids.end(), 0u);
  std::vector<char> mask(n, 0);
  for (std::size_t j = 0; j < m; ++j) {
    const auto pick = j + static_cast<std::size_t>(rng.below(n - j));
    std::swap(ids[j], ids[pick]);
    mask[ids[j]] = 1;
  }
  return mask;
}

namespace detail {

// Indices of the k largest |x_i|, lower index first among equal magnitudes,
// returned in ascending index order.
inline void select_top(std::span<const double> x, std::size_t k, CompressWorkspace& ws) {
  const std::size_t d = x.size();
  ws.order.resize(d);
  std::iota(ws.order.begin(), ws.order.end(), 0u);
  auto before = [&](std::uint32_t a, std::uint32_t b) {
    const double ma = std::abs(x[a]);
    const double mb = std::abs(x[b]);
    return ma > mb || (ma == mb && a < b);
  };
  if (k < d) {
    std::nth_element(ws.order.begin(), ws.order.begin() + static_cast<std::ptrdiff_t>(k),
                     ws.order.end(), before);
  }
  ws.order.resize(k);
  std::sort(ws.order.begin(), ws.order.end());
}

// Moves a uniform k-subset of pool (in draw order) to pool[0..k), then sorts
// that prefix.
inline void choose_uniform(std::vector<std::uint32_t>& pool, std::size_t k, RngStream& rng) {
  const std::size_t m = pool.size();
  for (std::size_t j = 0; j < k; ++j) {
    const auto pick = j + static_cast<std::size_t>(rng.below(m - j));
    std::swap(pool[j], pool[pick]);
  }
  std::sort(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k));
}

inline void emit(std::span<const double> x, std::span<const std::uint32_t> idx, double factor,
                 SparseMessage& out) {
  for (std::uint32_t i : idx) {
    if (x[i] != 0.0) {
      out.indices.push_back(i);
      out.values.push_back(factor * x[i]);
    }
  }
}

inline void compress_family(const Family& family, std::span<const double> x, RngStream& rng,
                            const Participation& part, CompressWorkspace& ws,
                            SparseMessage& out) {
  const std::size_t d = x.size();
  std::visit(
      overloaded{
          [&](const Identity&) {
            for (std::size_t i = 0; i < d; ++i) {
              if (x[i] != 0.0) {
                out.indices.push_back(static_cast<std::uint32_t>(i));
                out.values.push_back(x[i]);
              }
            }
          },
          [&](const RandK& c) {
            ws.pool.resize(d);
            std::iota(ws.pool.begin(), ws.pool.end(), 0u);
            choose_uniform(ws.pool, c.k, rng);
            emit(x, std::span(ws.pool).first(c.k),
                 static_cast<double>(d) / static_cast<double>(c.k), out);
          },
          [&](const TopK& c) {
            select_top(x, c.k, ws);
            emit(x, ws.order, 1.0, out);
          },
          [&](const Mix& c) {
            select_top(x, c.k, ws);
            ws.pool.clear();
            for (std::uint32_t i = 0, j = 0; i < d; ++i) {
              if (j < ws.order.size() && ws.order[j] == i) {
                ++j;
              } else {
                ws.pool.push_back(i);
              }
            }
            choose_uniform(ws.pool, c.k_prime, rng);
            ws.picked.assign(ws.order.begin(), ws.order.end());
            ws.picked.insert(ws.picked.end(), ws.pool.begin(),
                             ws.pool.begin() + static_cast<std::ptrdiff_t>(c.k_prime));
            std::sort(ws.picked.begin(), ws.picked.end());
            emit(x, ws.picked, 1.0, out);
          },
          [&](const Comp& c) {
            select_top(x, c.k_prime, ws);
            ws.pool.assign(ws.order.begin(), ws.order.end());
            choose_uniform(ws.pool, c.k, rng);
            emit(x, std::span(ws.pool).first(c.k),
                 static_cast<double>(c.k_prime) / static_cast<double>(c.k), out);
          },
          [&](const NiceSampling& c) {
            if (!part.selected) return;
            const double factor =
                static_cast<double>(part.workers) / static_cast<double>(c.m);
            for (std::size_t i = 0; i < d; ++i) {
              if (x[i] != 0.0) {
                out.indices.push_back(static_cast<std::uint32_t>(i));
                out.values.push_back(factor * x[i]);
              }
            }
          },
          [&](const Scaled& c) {
            compress_family(*c.inner, x, rng, part, ws, out);
            out.scale *= c.lambda;
          },
      },
      family);
}

}  // namespace detail

/// Compresses x into out, reusing out's and ws's storage. The spec must have
/// been validated; only the dimension is checked here.
inline void compress_into(const CompressorSpec& spec, std::span<const double> x, RngStream& rng,
                          SparseMessage& out, CompressWorkspace& ws,
                          const Participation& part = {}, WireFormat wire = {}) {
  require_dim(x.size(), spec.dim, "compress");
  out.dim = spec.dim;
  out.indices.clear();
  out.values.clear();
  out.scale = 1.0;
  detail::compress_family(spec.family, x, rng, part, ws, out);
  out.wire_bits = out.indices.size() * wire.bits_per_coordinate;
}

inline SparseMessage compress(const CompressorSpec& spec, std::span<const double> x,
                              RngStream& rng, const Participation& part = {},
                              WireFormat wire = {}) {
  validate(spec, part.workers);
  SparseMessage out;
  CompressWorkspace ws;
  compress_into(spec, x, rng, out, ws, part, wire);
  return out;
}

// ---------------------------------------------------------------------------
// Class parameters
// ---------------------------------------------------------------------------

/// Membership in C(eta, omega) together with the average relative variance
/// of n such compressors.
struct ClassParams {
  double eta = 0.0;
  double omega = 0.0;
  double omega_av = 0.0;
};

inline bool operator==(const ClassParams& a, const ClassParams& b) {
  return a.eta == b.eta && a.omega == b.omega && a.omega_av == b.omega_av;
}

enum class Dependence { kIndependent, kJointNice };

/// (1 - lambda + lambda eta)^2 + lambda^2 variance: the squared-error factor
/// of lambda * C for C in C(eta, variance).
inline double residual_factor(double scale, double eta, double variance) {
  const double b = 1.0 - scale + scale * eta;
  return b * b + scale * scale * variance;
}

inline ClassParams scale_params(const ClassParams& p, double lambda) {
  if (!(lambda > 0.0 && lambda <= 1.0)) {
    throw ConfigError("scale must lie in (0,1], got " + std::to_string(lambda));
  }
  if (lambda == 1.0) return p;
  return {lambda * p.eta + 1.0 - lambda, lambda * lambda * p.omega,
          lambda * lambda * p.omega_av};
}

/// Scale minimizing (1-l+l eta)^2 + l^2 omega over (0,1].
inline double lambda_star(double eta, double omega) {
  if (!(eta >= 0.0 && eta < 1.0)) throw ConfigError("eta must lie in [0,1)");
  if (!(omega >= 0.0)) throw ConfigError("omega must be nonnegative");
  const double gap = 1.0 - eta;
  return std::min(gap / (gap * gap + omega), 1.0);
}

/// alpha with C in B(alpha), when eta^2 + omega < 1.
inline std::optional<double> contraction_alpha(const ClassParams& p) {
  const double err = p.eta * p.eta + p.omega;
  if (err < 1.0) return 1.0 - err;
  return std::nullopt;
}

namespace detail {

inline ClassParams family_params(const Family& family, std::size_t dim, std::size_t n,
                                 Dependence dep) {
  const auto d = static_cast<double>(dim);
  const auto nn = static_cast<double>(n);
  auto independent = [&](double eta, double omega) {
    return ClassParams{eta, omega, omega / nn};
  };
  return std::visit(
      overloaded{
          [&](const Identity&) { return ClassParams{}; },
          [&](const RandK& c) { return independent(0.0, d / static_cast<double>(c.k) - 1.0); },
          [&](const TopK& c) {
            return independent(std::sqrt(1.0 - static_cast<double>(c.k) / d), 0.0);
          },
          [&](const Mix& c) {
            const auto k = static_cast<double>(c.k);
            const auto kp = static_cast<double>(c.k_prime);
            const double eta = (d - k - kp) / std::sqrt((d - k) * d);
            const double omega = kp * (d - k - kp) / ((d - k) * d);
            return independent(eta, omega);
          },
          [&](const Comp& c) {
            const auto k = static_cast<double>(c.k);
            const auto kp = static_cast<double>(c.k_prime);
            return independent(std::sqrt((d - kp) / d), (kp - k) / k);
          },
          [&](const NiceSampling& c) {
            const auto m = static_cast<double>(c.m);
            const double omega = (nn - m) / m;
            const double omega_av = n == c.m ? 0.0 : (nn - m) / (m * (nn - 1.0));
            return ClassParams{0.0, omega, omega_av};
          },
          [&](const Scaled& c) {
            return scale_params(family_params(*c.inner, dim, n, dep), c.lambda);
          },
      },
      family);
}

inline bool contains_nice(const Family& family) {
  if (std::holds_alternative<NiceSampling>(family)) return true;
  if (const auto* s = std::get_if<Scaled>(&family)) return contains_nice(*s->inner);
  return false;
}

}  // namespace detail

/// Closed-form (eta, omega, omega_av) for n workers using this compressor.
/// NiceSampling is joint by construction; every other family is assumed
/// independent across workers (omega_av = omega / n).
inline ClassParams theoretical_params(const CompressorSpec& spec, std::size_t n,
                                      Dependence dep = Dependence::kIndependent) {
  if (n < 1) throw ConfigError("worker count must be at least 1");
  validate(spec, n);
  const bool nice = detail::contains_nice(spec.family);
  if (dep == Dependence::kJointNice && !nice) {
    throw ConfigError("joint_nice dependence only applies to nice sampling, not " +
                      to_string(spec));
  }
  const ClassParams p = detail::family_params(spec.family, spec.dim, n, dep);
  if (!(p.eta < 1.0)) throw InternalError("closed-form eta >= 1 for " + to_string(spec));
  return p;
}

}  // namespace efbv
