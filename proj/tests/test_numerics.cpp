// Copyright 2026 The MIDUS Authors.
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <set>

#include <gtest/gtest.h>

#include "midus/numerics/ops.hpp"
#include "midus/numerics/rng.hpp"

namespace midus {
namespace {

TEST(Tensor, ShapeAndIndexing) {
  Tensor<double> t({2, 3, 4});
  EXPECT_EQ(t.size(), 24u);
  EXPECT_EQ(t.rank(), 3u);
  t.at(1, 2, 3) = 5.0;
  EXPECT_EQ(t[23], 5.0);
  EXPECT_EQ(t.slab(1).at(2, 3), 5.0);
  EXPECT_THROW(Tensor<double>({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  EXPECT_EQ(shape_string({2, 3}), "[2x3]");
}

TEST(Tensor, EnsureFiniteRejectsNan) {
  Tensor<float> t({2}, 1.0f);
  t[1] = std::nanf("");
  EXPECT_THROW(ensure_finite(t, "test"), NumericError);
}

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
  EXPECT_NE(Rng(1).fork(3).next_u64(), Rng(1).fork(4).next_u64());
}

TEST(Rng, NormalMoments) {
  Rng rng(7);
  double sum = 0, sq = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double v = rng.normal();
    sum += v;
    sq += v * v;
  }
  EXPECT_NEAR(sum / n, 0.0, 0.01);
  EXPECT_NEAR(sq / n, 1.0, 0.01);
}

TEST(Rng, BelowStaysInRange) {
  Rng rng(1);
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 1000; ++i) {
    const auto v = rng.below(7);
    ASSERT_LT(v, 7u);
    seen.insert(v);
  }
  EXPECT_EQ(seen.size(), 7u);
}

TEST(Matmul, MatchesLoopOracleAndTransposedVariants) {
  Rng rng(3);
  const auto a = random_normal<double>({5, 7}, rng);
  const auto b = random_normal<double>({7, 4}, rng);
  const auto c = matmul(a, b);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      double acc = 0;
      for (std::size_t p = 0; p < 7; ++p) acc += a.at(i, p) * b.at(p, j);
      EXPECT_NEAR(c.at(i, j), acc, 1e-12);
    }
  EXPECT_LT(max_abs_diff(matmul_nt(a, transpose(b)), c), 1e-12);
  EXPECT_LT(max_abs_diff(matmul_tn(transpose(a), b), c), 1e-12);
  EXPECT_THROW(matmul(a, a), ShapeError);
}

TEST(Matmul, HandExample) {
  const auto a = Tensor<double>::matrix({{1, 2}, {3, 4}});
  const auto b = Tensor<double>::matrix({{5, 6}, {7, 8}});
  EXPECT_EQ(matmul(a, b), Tensor<double>::matrix({{19, 22}, {43, 50}}));
}

TEST(Softmax, KnownValuesAndShiftInvariance) {
  const auto s = softmax(Tensor<double>::matrix({{0.0, std::log(3.0)}}));
  EXPECT_NEAR(s[0], 0.25, 1e-15);
  EXPECT_NEAR(s[1], 0.75, 1e-15);
  const auto big = softmax(Tensor<double>::matrix({{1000.0, 1000.0 + std::log(3.0)}}));
  EXPECT_NEAR(big[1], 0.75, 1e-12);
  EXPECT_THROW(softmax(Tensor<double>({2, 0})), ShapeError);
}

TEST(RmsNorm, UnitRootMeanSquare) {
  Rng rng(5);
  const auto x = random_normal<double>({3, 8}, rng, 4.0);
  const auto y = rms_norm(x, Tensor<double>({8}, 1.0), 1e-12);
  for (std::size_t r = 0; r < 3; ++r) {
    double ms = 0;
    for (double v : y.row(r)) ms += v * v;
    EXPECT_NEAR(ms / 8, 1.0, 1e-9);
  }
}

TEST(Topk, TieBreakPrefersLowerIndex) {
  const std::vector<double> s{1.0, 3.0, 3.0, 2.0, 3.0};
  const auto top = topk(s, 3);
  ASSERT_EQ(top.size(), 3u);
  EXPECT_EQ(top[0].index, 1u);
  EXPECT_EQ(top[1].index, 2u);
  EXPECT_EQ(top[2].index, 4u);
  EXPECT_EQ(topk(s, 4)[3].index, 3u);
}

TEST(Topk, RejectsBadK) {
  const std::vector<double> s{1.0, 2.0};
  EXPECT_THROW(topk(s, 0), ShapeError);
  EXPECT_THROW(topk(s, 3), ShapeError);
}

TEST(Topk, MatchesFullSortOracle) {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<float> s(40);
    for (auto& v : s) v = static_cast<float>(rng.below(10));  // many ties
    std::vector<Scored<float>> all;
    for (std::size_t i = 0; i < s.size(); ++i) all.push_back({i, s[i]});
    std::stable_sort(all.begin(), all.end(),
                     [](const auto& a, const auto& b) { return a.score > b.score; });
    const auto top = topk(s, 9);
    for (std::size_t i = 0; i < 9; ++i) ASSERT_EQ(top[i], all[i]);
  }
}

}  // namespace
}  // namespace midus
