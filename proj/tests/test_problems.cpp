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

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "efbv/problems.hpp"
#include "support.hpp"

namespace efbv {
namespace {

using testing::Gen;

Dataset parse(const std::string& text, std::size_t d = 0) {
  std::istringstream in(text);
  return parse_libsvm(in, d);
}

std::size_t parse_error_line(const std::string& text, std::size_t d = 0) {
  try {
    parse(text, d);
  } catch (const ParseError& e) {
    return e.line();
  }
  return 0;
}

std::vector<Shard> single_shard(const Dataset& ds) {
  Shard s;
  s.rows.resize(ds.rows);
  std::iota(s.rows.begin(), s.rows.end(), std::size_t{0});
  return {s};
}

// ---------------------------------------------------------------------------
// LibSVM
// ---------------------------------------------------------------------------

TEST(ParseLibsvm, Examples) {
  const auto a = parse("+1 1:0.5 3:2.0", 3);
  EXPECT_EQ(a.rows, 1u);
  EXPECT_EQ(a.dim, 3u);
  EXPECT_EQ(a.features, (Vector{0.5, 0.0, 2.0}));
  EXPECT_EQ(a.labels, (Vector{1.0}));
  const auto b = parse("-1", 4);
  EXPECT_EQ(b.features, Vector(4, 0.0));
  EXPECT_EQ(b.labels, (Vector{-1.0}));
  const auto c = parse("1 2:1\n0 1:3\n-1 2:-1\n");
  EXPECT_EQ(c.dim, 2u);
  EXPECT_EQ(c.labels, (Vector{1, -1, -1}));
  EXPECT_EQ(c.features, (Vector{0, 1, 3, 0, 0, -1}));
}

TEST(ParseLibsvm, BlankLinesAndCarriageReturns) {
  const auto ds = parse("\n+1 1:1\r\n\n   \n-1\t2:2\r\n");
  EXPECT_EQ(ds.rows, 2u);
  EXPECT_EQ(ds.features, (Vector{1, 0, 0, 2}));
}

TEST(ParseLibsvm, ErrorsCarryLineNumbers) {
  EXPECT_EQ(parse_error_line("+1 1:1\n2 1:1\n"), 2u);
  EXPECT_EQ(parse_error_line("+1 1:1\n-1 1:1\n+1 3:1 2:1\n"), 3u);
  EXPECT_EQ(parse_error_line("+1 2:1 2:1\n"), 1u);
  EXPECT_EQ(parse_error_line("+1 1:abc\n"), 1u);
  EXPECT_EQ(parse_error_line("+1 x:1\n"), 1u);
  EXPECT_EQ(parse_error_line("+1\n+1 0:1\n"), 2u);
  EXPECT_EQ(parse_error_line("+1 1\n"), 1u);
  EXPECT_EQ(parse_error_line("abc 1:1\n"), 1u);
  EXPECT_EQ(parse_error_line("+1 1:1\n+1 5:1\n", 4), 2u);
  EXPECT_EQ(parse_error_line("+1 1:nan\n"), 1u);
  EXPECT_THROW(parse(""), ParseError);
  EXPECT_THROW(parse("-1\n"), ParseError);
}

TEST(ParseLibsvm, RoundTrip) {
  Gen g(31);
  for (int trial = 0; trial < 20; ++trial) {
    Dataset ds = synth_dataset(trial, g.index(1, 12), g.index(2, 30), g.uniform(0, 2));
    for (double& v : ds.features)
      if (g.uniform() < 0.3) v = 0.0;
    std::ostringstream out;
    write_libsvm(out, ds);
    EXPECT_EQ(parse(out.str(), ds.dim), ds);
  }
}

// ---------------------------------------------------------------------------
// partition
// ---------------------------------------------------------------------------

std::vector<int> coverage(const std::vector<Shard>& shards, std::size_t rows) {
  std::vector<int> c(rows, 0);
  for (const auto& s : shards)
    for (auto r : s.rows) ++c[r];
  return c;
}

TEST(Partition, DisjointWithRemainderOnLastNode) {
  const auto ds = synth_dataset(1, 2, 10, 0.5);
  const auto shards = partition(ds, 3, 1, 7);
  ASSERT_EQ(shards.size(), 3u);
  EXPECT_EQ(shards[0].rows.size(), 3u);
  EXPECT_EQ(shards[1].rows.size(), 3u);
  EXPECT_EQ(shards[2].rows.size(), 4u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(shards[i].owner, i);
  for (int c : coverage(shards, 10)) EXPECT_EQ(c, 1);
}

TEST(Partition, OverlapTwo) {
  const auto ds = synth_dataset(1, 2, 6, 0.5);
  const auto shards = partition(ds, 3, 2, 7);
  for (const auto& s : shards) EXPECT_EQ(s.rows.size(), 4u);
  for (int c : coverage(shards, 6)) EXPECT_EQ(c, 2);
  const auto odd = partition(synth_dataset(1, 2, 11, 0.5), 3, 2, 7);
  const auto cov = coverage(odd, 11);
  EXPECT_EQ(std::count(cov.begin(), cov.end(), 2), 9);
  EXPECT_EQ(std::count(cov.begin(), cov.end(), 1), 2);
}

TEST(Partition, OneRowPerNode) {
  const auto ds = synth_dataset(1, 2, 5, 0.5);
  const auto shards = partition(ds, 5, 1, 3);
  for (const auto& s : shards) EXPECT_EQ(s.rows.size(), 1u);
  for (int c : coverage(shards, 5)) EXPECT_EQ(c, 1);
}

TEST(Partition, SeededShuffle) {
  const auto ds = synth_dataset(1, 2, 40, 0.5);
  EXPECT_EQ(partition(ds, 4, 1, 9)[0].rows, partition(ds, 4, 1, 9)[0].rows);
  EXPECT_NE(partition(ds, 4, 1, 9)[0].rows, partition(ds, 4, 1, 10)[0].rows);
}

TEST(Partition, Errors) {
  const auto ds = synth_dataset(1, 2, 5, 0.5);
  EXPECT_THROW(partition(ds, 6, 1, 0), ConfigError);
  EXPECT_THROW(partition(ds, 0, 1, 0), ConfigError);
  EXPECT_THROW(partition(ds, 2, 3, 0), ConfigError);
  EXPECT_THROW(partition(ds, 1, 2, 0), ConfigError);
}

// ---------------------------------------------------------------------------
// Objective and gradients
// ---------------------------------------------------------------------------

TEST(LocalGradient, SinglePointAtOrigin) {
  Dataset ds;
  ds.rows = 1;
  ds.dim = 3;
  ds.features = {1.0, -2.0, 0.5};
  ds.labels = {-1.0};
  const Problem p(ds, single_shard(ds), {.mu = 0.3});
  const Vector g = p.local_gradient(0, Vector(3, 0.0));
  for (std::size_t c = 0; c < 3; ++c) EXPECT_DOUBLE_EQ(g[c], 0.5 * ds.features[c]);
  EXPECT_DOUBLE_EQ(p.local_value(0, Vector(3, 0.0)), std::log(2.0));
}

void finite_difference_check(const ProblemOptions& opts, std::uint64_t seed) {
  Gen g(seed);
  const auto ds = synth_dataset(seed, 8, 60, 0.7);
  const Problem p(ds, partition(ds, 4, 1, seed), opts);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t i = g.index(0, 3);
    const Vector x = g.vec(8, 2.0);
    const Vector grad = p.local_gradient(i, x);
    const double h = 1e-6 * (1.0 + linalg::norm(x));
    Vector fd(8);
    for (std::size_t c = 0; c < 8; ++c) {
      Vector up = x, down = x;
      up[c] += h;
      down[c] -= h;
      fd[c] = (p.local_value(i, up) - p.local_value(i, down)) / (2 * h);
    }
    const double rel = std::sqrt(linalg::sqdist(fd, grad)) / std::max(linalg::norm(grad), 1e-8);
    EXPECT_LE(rel, 1e-5) << "trial " << trial;
  }
}

TEST(LocalGradient, FiniteDifferenceConvex) { finite_difference_check({.mu = 0.1}, 41); }

TEST(LocalGradient, FiniteDifferenceNonconvex) {
  finite_difference_check({.mu = 0.0, .nonconvex_weight = 0.1}, 42);
  finite_difference_check({.mu = 0.05, .nonconvex_weight = 1.0}, 43);
}

TEST(LocalGradient, PooledAverage) {
  const auto ds = synth_dataset(5, 6, 40, 0.5);
  const ProblemOptions opts{.mu = 0.2, .nonconvex_weight = 0.3};
  const Problem split(ds, partition(ds, 4, 1, 2), opts);
  const Problem pooled(ds, single_shard(ds), opts);
  Gen g(44);
  for (int trial = 0; trial < 10; ++trial) {
    const Vector x = g.vec(6);
    const Vector a = split.gradient(x);
    const Vector b = pooled.gradient(x);
    for (std::size_t c = 0; c < 6; ++c) EXPECT_NEAR(a[c], b[c], 1e-13);
    EXPECT_NEAR(split.value(x), pooled.value(x), 1e-13);
  }
}

TEST(LocalGradient, StableForLargeMargins) {
  const auto ds = synth_dataset(6, 4, 20, 3.0);
  const Problem p(ds, partition(ds, 2, 1, 0), {.mu = 0.0});
  const Vector x(4, 1e4);
  EXPECT_TRUE(std::isfinite(p.local_value(0, x)));
  EXPECT_TRUE(linalg::all_finite(p.local_gradient(0, x)));
  const Vector y(4, -1e4);
  EXPECT_TRUE(std::isfinite(p.local_value(1, y)));
  EXPECT_TRUE(linalg::all_finite(p.local_gradient(1, y)));
}

TEST(Objective, ConvexityWitness) {
  const auto ds = synth_dataset(7, 5, 50, 0.5);
  const double mu = 0.1;
  const Problem p(ds, partition(ds, 5, 1, 1), {.mu = mu});
  Gen g(45);
  for (int trial = 0; trial < 100; ++trial) {
    const Vector x = g.vec(5, 2.0), y = g.vec(5, 2.0);
    const Vector gx = p.gradient(x);
    Vector diff(5);
    for (std::size_t c = 0; c < 5; ++c) diff[c] = y[c] - x[c];
    const double lower = p.value(x) + linalg::dot(gx, diff) + 0.5 * mu * linalg::sqnorm(diff);
    EXPECT_GE(p.value(y), lower - 1e-12);
  }
}

TEST(Objective, SmoothnessWitness) {
  const auto ds = synth_dataset(8, 5, 50, 0.5);
  for (const ProblemOptions opts : {ProblemOptions{.mu = 0.1},
                                    ProblemOptions{.mu = 0.0, .nonconvex_weight = 0.5}}) {
    const Problem p(ds, partition(ds, 5, 2, 1), opts);
    const auto prof = p.smoothness();
    Gen g(46);
    for (int trial = 0; trial < 100; ++trial) {
      const std::size_t i = g.index(0, 4);
      const Vector x = g.vec(5, 3.0), y = g.vec(5, 3.0);
      const double lhs = std::sqrt(linalg::sqdist(p.local_gradient(i, x), p.local_gradient(i, y)));
      EXPECT_LE(lhs, prof.L_list[i] * std::sqrt(linalg::sqdist(x, y)) * (1 + 1e-12));
    }
  }
}

TEST(Smoothness, Profiles) {
  Dataset zero;
  zero.rows = 4;
  zero.dim = 3;
  zero.features.assign(12, 0.0);
  zero.labels = {1, -1, 1, -1};
  const Problem pz(zero, partition(zero, 2, 1, 0), {.mu = 0.25});
  for (double l : pz.smoothness().L_list) EXPECT_DOUBLE_EQ(l, 0.25);

  Dataset one;
  one.rows = 1;
  one.dim = 2;
  one.features = {2.0, 0.0};
  one.labels = {1};
  const Problem p1(one, single_shard(one), {.mu = 0.1});
  EXPECT_DOUBLE_EQ(p1.smoothness().L_list[0], 1.1);

  const auto ds = synth_dataset(9, 6, 90, 1.0);
  const Problem p(ds, partition(ds, 6, 1, 3), {.mu = 0.1, .nonconvex_weight = 0.2});
  const auto prof = p.smoothness();
  const double lmax = *std::max_element(prof.L_list.begin(), prof.L_list.end());
  EXPECT_LE(prof.L, prof.L_tilde);
  EXPECT_LE(prof.L_tilde, lmax);
  double expect = 0.0;
  for (std::size_t i = 0; i < 6; ++i) {
    double sq = 0.0;
    const auto shards = partition(ds, 6, 1, 3);
    for (auto r : shards[i].rows) sq += linalg::sqnorm(ds.row(r));
    const double li = 0.1 + sq / (4.0 * shards[i].rows.size()) + 0.4;
    EXPECT_NEAR(prof.L_list[i], li, 1e-12);
    expect += li * li;
  }
  EXPECT_NEAR(prof.L_tilde, std::sqrt(expect / 6), 1e-12);
  const Problem pa(ds, partition(ds, 6, 1, 3),
                   {.mu = 0.1, .nonconvex_weight = 0.2, .appendix_L = true});
  EXPECT_NEAR(pa.smoothness().L_tilde, std::sqrt(expect), 1e-12);
}

TEST(Problem, RejectsEmptyShards) {
  const auto ds = synth_dataset(1, 2, 4, 0.5);
  std::vector<Shard> shards(2);
  shards[0].rows = {0, 1};
  EXPECT_THROW(Problem(ds, shards, {}), ConfigError);
  EXPECT_THROW(Problem(ds, partition(ds, 2, 1, 0), {.mu = -1.0}), ConfigError);
}

// ---------------------------------------------------------------------------
// prox
// ---------------------------------------------------------------------------

TEST(Prox, Examples) {
  Gen g(47);
  const Vector v = g.vec(5);
  EXPECT_EQ(prox(Regularizer::none(), 0.7, v), v);
  EXPECT_EQ(prox(Regularizer::l1(1.0), 0.5, Vector{2, -0.3, 0.5}), (Vector{1.5, 0, 0}));
  EXPECT_EQ(prox(Regularizer::l1(3.0), 0.5, Vector(4, 0.0)), Vector(4, 0.0));
  EXPECT_THROW(prox(Regularizer::l1(1.0), 0.0, v), ConfigError);
}

TEST(Prox, SubgradientCharacterization) {
  Gen g(48);
  for (int trial = 0; trial < 200; ++trial) {
    const double w = g.uniform(0.01, 2.0), gamma = g.uniform(0.01, 2.0);
    const Vector v = g.vec(10, 2.0);
    const Vector p = prox(Regularizer::l1(w), gamma, v);
    for (std::size_t c = 0; c < 10; ++c) {
      const double u = (v[c] - p[c]) / gamma;
      if (p[c] != 0.0) {
        EXPECT_NEAR(u, w * (p[c] > 0 ? 1.0 : -1.0), 1e-12);
      } else {
        EXPECT_LE(std::abs(u), w * (1 + 1e-12));
      }
    }
  }
}

// ---------------------------------------------------------------------------
// synth_dataset
// ---------------------------------------------------------------------------

TEST(SynthDataset, DeterministicAndWellTyped) {
  const auto a = synth_dataset(1, 20, 200, 0.5);
  const auto b = synth_dataset(1, 20, 200, 0.5);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, synth_dataset(2, 20, 200, 0.5));
  for (double l : a.labels) EXPECT_TRUE(l == 1.0 || l == -1.0);
  EXPECT_TRUE(linalg::all_finite(a.features));
  EXPECT_THROW(synth_dataset(1, 0, 10, 0.5), ConfigError);
  EXPECT_THROW(synth_dataset(1, 3, 1, 0.5), ConfigError);
}

TEST(SynthDataset, SeparationControlsSignal) {
  // Correlation between label and the mean feature of a row.
  auto corr = [](const Dataset& ds) {
    double sl = 0, sf = 0, sll = 0, sff = 0, slf = 0;
    for (std::size_t j = 0; j < ds.rows; ++j) {
      const auto r = ds.row(j);
      const double f = std::accumulate(r.begin(), r.end(), 0.0);
      const double l = ds.labels[j];
      sl += l, sf += f, sll += l * l, sff += f * f, slf += l * f;
    }
    const double n = static_cast<double>(ds.rows);
    return (slf / n - sl / n * sf / n) /
           std::sqrt((sll / n - sl / n * sl / n) * (sff / n - sf / n * sf / n));
  };
  const auto null = synth_dataset(3, 10, 4000, 0.0);
  EXPECT_LT(std::abs(corr(null)), 4.0 / std::sqrt(4000.0));
  EXPECT_GT(corr(synth_dataset(3, 10, 4000, 1.0)), 0.5);
}

}  // namespace
}  // namespace efbv
