// Copyright 2026 The MIDUS Authors.
// SPDX-License-Identifier: Apache-2.0

#include <sstream>

#include <gtest/gtest.h>

#include "midus/train/gradcheck.hpp"
#include "midus/train/head_importance.hpp"
#include "midus/upscale/upscaler.hpp"

namespace midus {
namespace {

const ModelDims kDims{24, 16, 4, 32};

ModelSpec<double> base_model(std::uint64_t seed) {
  Rng rng(seed);
  auto m = ModelSpec<double>::random(kDims, 3, rng, 0.3);
  m.trainable.assign(3, false);
  m.train_embeddings = false;
  return m;
}

double mean_loss(const ModelSpec<double>& spec, const std::vector<Example>& data,
                 const std::map<std::size_t, std::vector<double>>* scales) {
  ForwardOptions<double> fwd;
  fwd.head_scales = scales;
  double total = 0.0;
  for (const auto& e : data) {
    const auto logits = model_forward(e.inputs, spec, fwd);
    total += lm_loss(logits, std::span<const Token>(e.targets),
                     std::span<const std::uint8_t>(e.mask)) /
             static_cast<double>(e.inputs.size());
  }
  return total / static_cast<double>(data.size());
}

TEST(HeadImportance, MatchesFiniteDifferenceOfHeadScale) {
  const auto spec = base_model(1);
  const auto data = random_examples(kDims.vocab, 7, 3, 2);
  const auto report = head_importance(spec, data);
  ASSERT_EQ(report.layers(), 3u);
  ASSERT_EQ(report.heads(), 4u);
  const double eps = 1e-5;
  for (std::size_t l = 0; l < 3; ++l)
    for (std::size_t h = 0; h < 4; ++h) {
      std::map<std::size_t, std::vector<double>> up, down;
      up[l] = std::vector<double>(4, 1.0);
      down[l] = std::vector<double>(4, 1.0);
      up[l][h] += eps;
      down[l][h] -= eps;
      // Each sequence has the same length, so the per-sequence 1/s factor
      // can be folded into the loss.
      const double numeric = (mean_loss(spec, data, &up) - mean_loss(spec, data, &down)) / (2 * eps);
      EXPECT_NEAR(report.scores.at(l, h), numeric, 1e-8 + 1e-5 * std::abs(numeric))
          << "layer " << l << " head " << h;
    }
}

TEST(HeadImportance, HeadWithoutDownstreamPathScoresZero) {
  auto spec = base_model(3);
  auto& attn = std::get<TransformerBlockParams<double>>(spec.blocks[1]).attn;
  const std::size_t dh = kDims.d_model / kDims.heads;
  for (std::size_t r = 2 * dh; r < 3 * dh; ++r)
    for (std::size_t c = 0; c < kDims.d_model; ++c) attn.wo.at(r, c) = 0.0;
  const auto report = head_importance(spec, random_examples(kDims.vocab, 6, 2, 4));
  EXPECT_EQ(report.scores.at(1, 2), 0.0);
  EXPECT_NE(report.scores.at(1, 1), 0.0);
}

TEST(HeadImportance, DuplicatingTheDatasetChangesNothing) {
  const auto spec = base_model(5);
  auto data = random_examples(kDims.vocab, 6, 3, 6);
  const auto once = head_importance(spec, data);
  const auto copy = data;
  data.insert(data.end(), copy.begin(), copy.end());
  const auto twice = head_importance(spec, data);
  EXPECT_LT(max_abs_diff(once.scores, twice.scores), 1e-12);
}

std::vector<std::vector<double>> parse_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    std::vector<double> row;
    std::istringstream cells(line);
    std::string cell;
    while (std::getline(cells, cell, ',')) row.push_back(std::stod(cell));
    rows.push_back(row);
  }
  return rows;
}

TEST(HeadImportance, VarianceCsvMatchesRecomputationFromScores) {
  const auto report = head_importance(base_model(7), random_examples(kDims.vocab, 6, 2, 8));
  std::ostringstream scores, variance;
  report.write_scores_csv(scores);
  report.write_variance_csv(variance);
  EXPECT_EQ(scores.str().substr(0, 16), "layer,head,is_h\n");
  const auto s = parse_csv(scores.str());
  const auto v = parse_csv(variance.str());
  ASSERT_EQ(s.size(), report.layers() * report.heads());
  ASSERT_EQ(v.size(), report.layers());
  for (std::size_t l = 0; l < v.size(); ++l) {
    double mean = 0, var = 0;
    for (std::size_t h = 0; h < 4; ++h) mean += s[l * 4 + h][2];
    mean /= 4;
    for (std::size_t h = 0; h < 4; ++h) var += (s[l * 4 + h][2] - mean) * (s[l * 4 + h][2] - mean);
    EXPECT_NEAR(v[l][1], var / 4, 1e-9);
  }
}

TEST(HeadImportance, UntrainedMidusMatchesBase) {
  const auto base = base_model(9);
  const auto data = random_examples(kDims.vocab, 6, 3, 10);
  for (auto kind : {MemoryKind::hml, MemoryKind::pkm, MemoryKind::linear}) {
    const auto up = build_midus(base, UpscalePlan::midus(kind, {4, 4, 2, 16}, 2));
    const auto a = head_importance(base, data);
    const auto b = head_importance(up, data);
    ASSERT_EQ(b.layers(), 3u);
    EXPECT_LT(max_abs_diff(a.scores, b.scores), 1e-12) << to_string(kind);
    EXPECT_EQ(b.blocks.size(), 3u);
  }
}

TEST(HeadImportance, EmptyDatasetRejected) {
  EXPECT_THROW(head_importance(base_model(11), {}), ConfigError);
}

}  // namespace
}  // namespace midus
