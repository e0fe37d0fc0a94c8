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

// Shared helpers for the unit tests. Generators use std::mt19937_64 so they
// stay independent of the library's own streams.

#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "efbv/efbv.hpp"

namespace efbv::testing {

class Gen {
 public:
  explicit Gen(std::uint64_t seed) : eng_(seed) {}

  double uniform(double lo = 0.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>(lo, hi)(eng_);
  }
  double normal() { return std::normal_distribution<double>()(eng_); }
  std::size_t index(std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(eng_);
  }
  Vector vec(std::size_t d, double scale = 1.0) {
    Vector v(d);
    for (double& x : v) x = scale * normal();
    return v;
  }
  // Distinct magnitudes, so top-k selections are unique.
  Vector distinct(std::size_t d) {
    Vector v(d);
    for (std::size_t i = 0; i < d; ++i) {
      const double mag = 1.0 + static_cast<double>(i) + 0.5 * uniform();
      v[i] = (uniform() < 0.5 ? -1.0 : 1.0) * mag;
    }
    for (std::size_t i = d; i > 1; --i) std::swap(v[i - 1], v[index(0, i - 1)]);
    return v;
  }
  std::mt19937_64& engine() { return eng_; }

 private:
  std::mt19937_64 eng_;
};

inline Dataset tiny_dataset(std::size_t rows, std::size_t dim, std::uint64_t seed,
                            double sep = 0.5) {
  return synth_dataset(seed, dim, rows, sep);
}

// Relative difference with an absolute floor.
inline double rel_err(double a, double b, double floor = 1e-12) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace efbv::testing
