// Copyright 2026 The MIDUS Authors.
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "midus/core/transformer_block.hpp"
#include "midus/layers/memory_block.hpp"

namespace midus {
namespace {

constexpr std::size_t kD = 16, kH = 2, kS = 5;

MemoryConfig small_cfg() { return {kH, 4, 3, kD}; }

// Brute force over all composite keys: scores, top-k by (score desc, index
// asc), softmax, weighted sum of the value rows each kind reads.
struct Pick {
  std::vector<std::size_t> idx;
  std::vector<double> w;
};

Pick brute_pick(const std::vector<double>& scores, std::size_t k) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](auto a, auto b) { return scores[a] > scores[b]; });
  Pick p;
  p.idx.assign(order.begin(), order.begin() + static_cast<long>(k));
  double mx = scores[p.idx[0]], z = 0;
  for (auto i : p.idx) z += std::exp(scores[i] - mx);
  for (auto i : p.idx) p.w.push_back(std::exp(scores[i] - mx) / z);
  return p;
}

std::vector<double> head_scores(const MemoryBlockParams<double>& p,
                                const Tensor<double>& q, std::size_t r,
                                std::size_t h) {
  const std::size_t dh = p.cfg.head_dim(), dp = dh / 2, n = p.cfg.sub_keys;
  std::vector<double> out;
  if (p.layer.kind == MemoryKind::linear) {
    for (std::size_t key = 0; key < n * n; ++key) {
      double acc = 0;
      for (std::size_t c = 0; c < dh; ++c) acc += q.at(r, h * dh + c) * p.flat_keys.at(h, key, c);
      out.push_back(acc);
    }
    return out;
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double a = 0, b = 0;
      for (std::size_t c = 0; c < dp; ++c) {
        a += q.at(r, h * dh + c) * p.product_keys.row_keys.at(h, i, c);
        b += q.at(r, h * dh + dp + c) * p.product_keys.col_keys.at(h, j, c);
      }
      out.push_back(a + b);
    }
  return out;
}

Tensor<double> oracle_layer(const MemoryBlockParams<double>& p, const Tensor<double>& a) {
  const std::size_t s = a.rows(), d = p.cfg.model_dim, dh = p.cfg.head_dim();
  Tensor<double> q = p.layer.kind == MemoryKind::hml ? a : matmul(a, p.query_proj);
  Tensor<double> m({s, d});
  for (std::size_t r = 0; r < s; ++r)
    for (std::size_t h = 0; h < p.cfg.heads; ++h) {
      const Pick pick = brute_pick(head_scores(p, q, r, h), p.cfg.top_k);
      if (p.layer.kind == MemoryKind::hml) {
        std::vector<double> mix(dh, 0.0);
        for (std::size_t j = 0; j < pick.idx.size(); ++j)
          for (std::size_t c = 0; c < dh; ++c) mix[c] += pick.w[j] * p.hive.base.at(pick.idx[j], c);
        for (std::size_t o = 0; o < dh; ++o) {
          double acc = 0;
          for (std::size_t c = 0; c < dh; ++c) acc += p.hive.transforms.at(h, o, c) * mix[c];
          m.at(r, h * dh + o) = acc;
        }
      } else {
        for (std::size_t j = 0; j < pick.idx.size(); ++j)
          for (std::size_t c = 0; c < d; ++c) m.at(r, c) += pick.w[j] * p.values.at(pick.idx[j], c);
      }
    }
  return m;
}

MemoryBlockParams<double> make_block(MemoryKind kind, std::uint64_t seed,
                                     MemoryToggles toggles = {}) {
  Rng rng(seed);
  const auto attn = AttentionParams<double>::random(kD, kH, rng, 0.3);
  auto p = MemoryBlockParams<double>::from_attention(
      {kind, toggles}, small_cfg(), Tensor<double>({kD}, 1.0), attn, rng);
  if (kind == MemoryKind::hml) p.hive.base = random_normal<double>(p.hive.base.shape(), rng);
  else p.values = random_normal<double>(p.values.shape(), rng);
  return p;
}

TEST(Attention, CausalPrefixUnaffectedByLaterTokens) {
  Rng rng(1);
  const auto p = AttentionParams<double>::random(kD, kH, rng, 0.3);
  auto x = random_normal<double>({kS, kD}, rng);
  const auto before = causal_attention(x, p, true);
  for (std::size_t c = 0; c < kD; ++c) x.at(kS - 1, c) += 1.0;
  const auto after = causal_attention(x, p, true);
  for (std::size_t r = 0; r + 1 < kS; ++r)
    for (std::size_t c = 0; c < kD; ++c) EXPECT_EQ(before.at(r, c), after.at(r, c));
  EXPECT_GT(std::abs(before.at(kS - 1, 0) - after.at(kS - 1, 0)), 0.0);
}

TEST(Attention, FirstTokenAttendsOnlyToItself) {
  Rng rng(2);
  const auto p = AttentionParams<double>::random(kD, kH, rng, 0.3);
  const auto x = random_normal<double>({3, kD}, rng);
  const auto y = causal_attention(x, p, true);
  const Tensor<double> x0({1, kD}, std::vector<double>(x.row(0).begin(), x.row(0).end()));
  const auto expect = matmul(matmul(x0, p.wv), p.wo);
  for (std::size_t c = 0; c < kD; ++c) EXPECT_NEAR(y.at(0, c), expect.at(0, c), 1e-12);
}

TEST(Attention, RotaryPreservesNormsAndInverts) {
  Rng rng(3);
  const auto x = random_normal<double>({6, kD}, rng);
  auto y = x;
  detail::apply_rope(y, kH);
  for (std::size_t r = 0; r < 6; ++r) {
    double a = 0, b = 0;
    for (std::size_t c = 0; c < kD; ++c) {
      a += x.at(r, c) * x.at(r, c);
      b += y.at(r, c) * y.at(r, c);
    }
    EXPECT_NEAR(a, b, 1e-10);
  }
  detail::apply_rope(y, kH, -1.0);
  EXPECT_LT(max_abs_diff(x, y), 1e-12);
}

TEST(Attention, MissingProjectionRejected) {
  Rng rng(4);
  const auto p = AttentionParams<double>::random(kD, kH, rng, 0.3, false);
  EXPECT_THROW(causal_attention(random_normal<double>({2, kD}, rng), p, true), ShapeError);
  EXPECT_THROW(AttentionParams<double>::random(6, 2, rng, 0.1), ShapeError);
}

TEST(Attention, UnitHeadScaleIsBitwiseNoOp) {
  Rng rng(5);
  const auto p = AttentionParams<double>::random(kD, kH, rng, 0.3);
  const auto x = random_normal<double>({kS, kD}, rng);
  const std::vector<double> ones(kH, 1.0);
  EXPECT_EQ(causal_attention(x, p, true), causal_attention(x, p, true, static_cast<AttentionCache<double>*>(nullptr), ones));
}

TEST(FeedForward, MatchesSiluGateOracle) {
  Rng rng(6);
  const auto p = FeedForwardParams<double>::random(4, 6, rng, 0.5);
  const auto x = random_normal<double>({3, 4}, rng);
  const auto y = feed_forward(x, p);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t o = 0; o < 4; ++o) {
      double acc = 0;
      for (std::size_t f = 0; f < 6; ++f) {
        double g = 0, u = 0;
        for (std::size_t c = 0; c < 4; ++c) {
          g += x.at(r, c) * p.w_gate.at(c, f);
          u += x.at(r, c) * p.w_up.at(c, f);
        }
        acc += g / (1.0 + std::exp(-g)) * u * p.w_down.at(f, o);
      }
      EXPECT_NEAR(y.at(r, o), acc, 1e-12);
    }
}

TEST(TransformerBlock, ZeroOutputWeightsGiveIdentity) {
  Rng rng(7);
  auto b = TransformerBlockParams<double>::random(kD, kH, 32, rng, 0.3);
  b.attn.wo.fill(0.0);
  b.ffn.w_down.fill(0.0);
  const auto x = random_normal<double>({kS, kD}, rng);
  EXPECT_EQ(transformer_block_forward(x, b), x);
}

TEST(QueryNorm, BatchNormTrainStandardizesFeatures) {
  Rng rng(8);
  const auto q = random_normal<double>({20, 6}, rng, 3.0);
  NormCache<double> cache;
  const auto y = batchnorm_query(q, BatchNormStats<double>::fresh(6), Mode::train, &cache);
  for (std::size_t c = 0; c < 6; ++c) {
    double m = 0, v = 0;
    for (std::size_t r = 0; r < 20; ++r) m += y.at(r, c);
    m /= 20;
    for (std::size_t r = 0; r < 20; ++r) v += (y.at(r, c) - m) * (y.at(r, c) - m);
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(v / 20, 1.0, 1e-5);
  }
  EXPECT_TRUE(cache.batch_stats);
}

TEST(QueryNorm, BatchNormEvalUsesRunningStats) {
  auto stats = BatchNormStats<double>::fresh(2);
  stats.running_mean[0] = 1.0;
  stats.running_var[1] = 4.0;
  const auto q = Tensor<double>::matrix({{3.0, 2.0}});
  const auto y = batchnorm_query(q, stats, Mode::eval);
  EXPECT_NEAR(y.at(0, 0), 2.0 / std::sqrt(1.0 + kQueryNormEps), 1e-15);
  EXPECT_NEAR(y.at(0, 1), 2.0 / std::sqrt(4.0 + kQueryNormEps), 1e-15);
}

TEST(QueryNorm, RunningStatsMomentumUpdate) {
  auto stats = BatchNormStats<double>::fresh(1);
  NormCache<double> batch;
  batch.mean = {2.0};
  batch.var = {3.0};
  update_running_stats(stats, batch, 4);
  EXPECT_NEAR(stats.running_mean[0], 0.1 * 2.0, 1e-15);
  EXPECT_NEAR(stats.running_var[0], 0.9 + 0.1 * 3.0 * 4.0 / 3.0, 1e-15);
}

TEST(QueryNorm, HeadLayerNormStandardizesEachHead) {
  Rng rng(9);
  const auto q = random_normal<double>({4, 8}, rng, 2.0);
  const auto y = head_layernorm(q, 2);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t h = 0; h < 2; ++h) {
      double m = 0, v = 0;
      for (std::size_t c = 0; c < 4; ++c) m += y.at(r, h * 4 + c);
      for (std::size_t c = 0; c < 4; ++c) v += y.at(r, h * 4 + c) * y.at(r, h * 4 + c);
      EXPECT_NEAR(m, 0.0, 1e-12);
      EXPECT_NEAR(v / 4, 1.0, 1e-4);
    }
}

class MemoryKinds : public ::testing::TestWithParam<MemoryKind> {};

TEST_P(MemoryKinds, LayerMatchesBruteForceOracle) {
  const auto p = make_block(GetParam(), 10);
  Rng rng(11);
  const auto a = random_normal<double>({kS, kD}, rng);
  const auto m = memory_layer_forward(a, p);
  EXPECT_LT(max_abs_diff(m, oracle_layer(p, a)), 1e-12);
}

TEST_P(MemoryKinds, ZeroValuesMakeBlockAnExactIdentity) {
  Rng rng(12);
  const auto attn = AttentionParams<double>::random(kD, kH, rng, 0.3);
  const auto p = MemoryBlockParams<double>::from_attention(
      MemoryLayerKind::defaults(GetParam()), small_cfg(), Tensor<double>({kD}, 1.0), attn, rng);
  const auto x = random_normal<double>({kS, kD}, rng);
  EXPECT_EQ(memory_block_forward(x, p), x);
  EXPECT_EQ(memory_block_forward(x, p, {Mode::train, {}, nullptr}), x);
}

TEST_P(MemoryKinds, BlockAddsLayerOutputToInput) {
  const auto p = make_block(GetParam(), 13);
  Rng rng(14);
  const auto x = random_normal<double>({kS, kD}, rng);
  auto a = causal_attention(rms_norm(x, p.attn_norm, kNormEps<double>), p.attn,
                            p.attention_projects());
  if (GetParam() != MemoryKind::hml) add_inplace(a, x);
  const auto expect = add(x, oracle_layer(p, a));
  EXPECT_LT(max_abs_diff(memory_block_forward(x, p), expect), 1e-12);
}

INSTANTIATE_TEST_SUITE_P(AllKinds, MemoryKinds,
                         ::testing::Values(MemoryKind::linear, MemoryKind::pkm,
                                           MemoryKind::hml),
                         [](const auto& info) { return std::string(to_string(info.param)); });

TEST(MemoryBlock, DefaultsAndHmlDropsOutputProjection) {
  EXPECT_TRUE(MemoryLayerKind::defaults(MemoryKind::pkm).toggles.query_batchnorm);
  EXPECT_TRUE(MemoryLayerKind::defaults(MemoryKind::linear).toggles.query_batchnorm);
  EXPECT_FALSE(MemoryLayerKind::defaults(MemoryKind::hml).toggles.query_batchnorm);
  EXPECT_TRUE(make_block(MemoryKind::hml, 1).attn.wo.empty());
  MemoryToggles keep;
  keep.output_projection = true;
  EXPECT_FALSE(make_block(MemoryKind::hml, 1, keep).attn.wo.empty());
  EXPECT_FALSE(make_block(MemoryKind::pkm, 1).attn.wo.empty());
}

TEST(MemoryBlock, InternalResidualFeedsBlockInputToQueries) {
  MemoryToggles t;
  t.internal_residual = true;
  const auto p = make_block(MemoryKind::hml, 15, t);
  Rng rng(16);
  const auto x = random_normal<double>({kS, kD}, rng);
  const auto a = add(x, causal_attention(rms_norm(x, p.attn_norm, kNormEps<double>), p.attn, false));
  EXPECT_LT(max_abs_diff(memory_block_forward(x, p), add(x, oracle_layer(p, a))), 1e-12);
}

TEST(MemoryBlock, ValueCachePathMatchesFactorizedPath) {
  const auto p = make_block(MemoryKind::hml, 17);
  Rng rng(18);
  const auto x = random_normal<double>({kS, kD}, rng);
  const auto cache = build_value_cache(p.hive);
  const auto fast = memory_block_forward(x, p, {Mode::eval, {}, &cache});
  EXPECT_LT(max_abs_diff(fast, memory_block_forward(x, p)), 1e-12);
}

TEST(MemoryBlock, QueryNormTogglesApply) {
  MemoryToggles t;
  t.query_layernorm = true;
  const auto p = make_block(MemoryKind::hml, 19, t);
  Rng rng(20);
  const auto a = random_normal<double>({kS, kD}, rng, 5.0);
  MemoryLayerCache<double> cache;
  memory_layer_forward(a, p, {}, &cache);
  EXPECT_EQ(cache.queries, head_layernorm(a, kH));
}

TEST(MemoryBlock, KindCheckedEntryPoints) {
  const auto pkm = make_block(MemoryKind::pkm, 21);
  const auto hml = make_block(MemoryKind::hml, 21);
  const auto lin = make_block(MemoryKind::linear, 21);
  Rng rng(22);
  const auto x = random_normal<double>({kS, kD}, rng);
  EXPECT_THROW(linear_memory_forward(x, pkm), ConfigError);
  EXPECT_THROW(pkm_memory_forward(x, hml), ConfigError);
  EXPECT_THROW(hml_block_forward(x, lin), ConfigError);
  EXPECT_NO_THROW(linear_memory_forward(x, lin));
  EXPECT_NO_THROW(pkm_memory_forward(x, pkm));
  EXPECT_NO_THROW(hml_block_forward(x, hml));
}

TEST(MemoryBlock, RejectsMismatchedAttentionAndInput) {
  Rng rng(23);
  const auto attn = AttentionParams<double>::random(kD, 4, rng, 0.3);
  EXPECT_THROW(MemoryBlockParams<double>::from_attention(
                   MemoryLayerKind::defaults(MemoryKind::hml), small_cfg(),
                   Tensor<double>({kD}, 1.0), attn, rng),
               ConfigError);
  const auto p = make_block(MemoryKind::pkm, 24);
  EXPECT_THROW(memory_layer_forward(random_normal<double>({2, kD + 2}, rng), p), ShapeError);
}

TEST(MemoryBlock, FloatTracksDouble) {
  const auto p = make_block(MemoryKind::hml, 25);
  Rng rng(26);
  const auto x = random_normal<double>({kS, kD}, rng);
  MemoryBlockParams<float> pf;
  pf.layer = p.layer;
  pf.cfg = p.cfg;
  pf.attn_norm = p.attn_norm.cast<float>();
  pf.attn.heads = p.attn.heads;
  pf.attn.wq = p.attn.wq.cast<float>();
  pf.attn.wk = p.attn.wk.cast<float>();
  pf.attn.wv = p.attn.wv.cast<float>();
  pf.product_keys = {p.product_keys.row_keys.cast<float>(), p.product_keys.col_keys.cast<float>()};
  pf.hive = {p.hive.base.cast<float>(), p.hive.transforms.cast<float>()};
  pf.query_stats = BatchNormStats<float>::fresh(kD);
  const auto yf = memory_block_forward(x.cast<float>(), pf);
  EXPECT_LT(max_abs_diff(yf.cast<double>(), memory_block_forward(x, p)), 1e-4);
}

}  // namespace
}  // namespace midus
