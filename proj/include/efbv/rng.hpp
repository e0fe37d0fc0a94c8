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

// Counter-based random streams. Every draw is a pure function of
// (master seed, worker, round, purpose, draw index), so runs are
// reproducible regardless of evaluation order and two configurations that
// share a seed see the same compressor draws.

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>

namespace efbv {

/// Philox4x32-10 block function (Salmon et al., SC'11).
inline std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr,
                                               std::array<std::uint32_t, 2> key) {
  constexpr std::uint32_t kMul0 = 0xD2511F53u;
  constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
  constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
  constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;
  for (int round = 0; round < 10; ++round) {
    if (round > 0) {
      key[0] += kWeyl0;
      key[1] += kWeyl1;
    }
    const std::uint64_t p0 = static_cast<std::uint64_t>(kMul0) * ctr[0];
    const std::uint64_t p1 = static_cast<std::uint64_t>(kMul1) * ctr[2];
    const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
    const auto lo0 = static_cast<std::uint32_t>(p0);
    const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
    const auto lo1 = static_cast<std::uint32_t>(p1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
  }
  return ctr;
}

/// What a stream is used for; streams with different purposes never overlap.
enum class StreamPurpose : std::uint32_t {
  kCompress = 0,
  kNiceSubset = 1,
  kPartition = 2,
  kSynthetic = 3,
  kCertify = 4,
};

/// One independent stream of random numbers. Satisfies
/// UniformRandomBitGenerator so it can drive <random> distributions, but the
/// library only uses the members below, whose output is fixed across
/// platforms.
class RngStream {
 public:
  using result_type = std::uint32_t;

  RngStream(std::uint64_t master_seed, std::uint32_t worker, std::uint64_t round,
            StreamPurpose purpose = StreamPurpose::kCompress)
      : key_{static_cast<std::uint32_t>(master_seed),
             static_cast<std::uint32_t>(master_seed >> 32)},
        worker_(worker),
        round_lo_(static_cast<std::uint32_t>(round)),
        round_hi_((static_cast<std::uint32_t>(purpose) << 24) |
                  (static_cast<std::uint32_t>(round >> 32) & 0x00FFFFFFu)) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    if (lane_ == 4) refill();
    ++consumed_;
    return block_[lane_++];
  }

  std::uint64_t next_u64() {
    const std::uint64_t hi = (*this)();
    return (hi << 32) | (*this)();
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, bound), bound >= 1. Unbiased (Lemire's method).
  std::uint64_t below(std::uint64_t bound) {
    if (bound <= 1) return 0;
    if (bound <= 0xFFFFFFFFull) {
      const auto b = static_cast<std::uint32_t>(bound);
      std::uint64_t m = static_cast<std::uint64_t>((*this)()) * b;
      auto low = static_cast<std::uint32_t>(m);
      if (low < b) {
        const std::uint32_t threshold = static_cast<std::uint32_t>(-b) % b;
        while (low < threshold) {
          m = static_cast<std::uint64_t>((*this)()) * b;
          low = static_cast<std::uint32_t>(m);
        }
      }
      return m >> 32;
    }
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t v = next_u64();
    while (v >= limit) v = next_u64();
    return v % bound;
  }

  /// Standard normal via Box-Muller; both variates of a pair are used.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  /// Number of 32-bit words drawn so far.
  std::uint64_t consumed() const noexcept { return consumed_; }

 private:
  void refill() {
    block_ = philox4x32({counter_, worker_, round_lo_, round_hi_}, key_);
    ++counter_;
    lane_ = 0;
  }

  std::array<std::uint32_t, 2> key_;
  std::uint32_t worker_;
  std::uint32_t round_lo_;
  std::uint32_t round_hi_;
  std::uint32_t counter_ = 0;
  std::array<std::uint32_t, 4> block_{};
  int lane_ = 4;
  std::uint64_t consumed_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace efbv
