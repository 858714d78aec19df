// Copyright 2026 The MIDUS Authors.
// SPDX-License-Identifier: Apache-2.0

#ifndef MIDUS_TRAIN_HEAD_IMPORTANCE_HPP_
#define MIDUS_TRAIN_HEAD_IMPORTANCE_HPP_

#include <cmath>
#include <cstddef>
#include <iomanip>
#include <ostream>
#include <vector>

#include "midus/train/corpus.hpp"
#include "midus/train/model_backward.hpp"

namespace midus {

/// IS_h per transformer layer and head: the inner product between head h's
/// output a_h (before the output projection) and dL/da_h, averaged over the
/// positions of a sequence and then over the dataset. Signed.
struct HeadImportanceReport {
  std::vector<std::size_t> blocks;  // stack index of each reported layer
  Tensor<double> scores;            // [layers x H]

  std::size_t layers() const { return scores.rows(); }
  std::size_t heads() const { return scores.cols(); }

  /// Population variance across the heads of `layer`.
  double variance(std::size_t layer) const {
    const auto row = scores.row(layer);
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(row.size());
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    return var / static_cast<double>(row.size());
  }

  Tensor<double> absolute() const {
    Tensor<double> out = scores;
    for (double& v : out.data()) v = std::abs(v);
    return out;
  }

  /// Columns: layer, head, is_h.
  void write_scores_csv(std::ostream& out) const {
    out << "layer,head,is_h\n" << std::setprecision(17);
    for (std::size_t l = 0; l < layers(); ++l)
      for (std::size_t h = 0; h < heads(); ++h)
        out << l << ',' << h << ',' << scores.at(l, h) << '\n';
  }

  /// Columns: layer, variance.
  void write_variance_csv(std::ostream& out) const {
    out << "layer,variance\n" << std::setprecision(17);
    for (std::size_t l = 0; l < layers(); ++l) out << l << ',' << variance(l) << '\n';
  }
};

template <Real T>
HeadImportanceReport head_importance(const ModelSpec<T>& spec, const std::vector<Example>& data,
                                     const RetrievalOptions& retrieval = {}) {
  if (data.empty()) throw ConfigError("head_importance: empty dataset");
  const std::size_t H = spec.dims.heads;
  const std::size_t dh = spec.dims.d_model / H;

  ModelSpec<T> frozen = spec;
  frozen.trainable.assign(frozen.blocks.size(), false);
  frozen.train_embeddings = false;

  HeadImportanceReport report;
  std::vector<std::size_t> row_of(spec.blocks.size(), kNoBlock);
  for (std::size_t l = 0; l < spec.blocks.size(); ++l) {
    if (!is_memory(spec.blocks[l])) {
      row_of[l] = report.blocks.size();
      report.blocks.push_back(l);
    }
  }
  report.scores = Tensor<double>({report.blocks.size(), H});

  ForwardOptions<T> fwd;
  fwd.retrieval = retrieval;
  BackwardOptions<T> bwd;
  std::vector<double> seq(report.scores.size());
  bwd.head_observer = [&](std::size_t block, const Tensor<T>& a, const Tensor<T>& g) {
    if (row_of[block] == kNoBlock) return;
    const std::size_t s = a.rows();
    for (std::size_t h = 0; h < H; ++h) {
      double acc = 0.0;
      for (std::size_t r = 0; r < s; ++r)
        for (std::size_t c = h * dh; c < (h + 1) * dh; ++c)
          acc += static_cast<double>(a.at(r, c)) * static_cast<double>(g.at(r, c));
      seq[row_of[block] * H + h] = acc / static_cast<double>(s);
    }
  };

  GradStore<T> store(frozen);
  for (const auto& e : data) {
    ModelCache<T> cache;
    const Tensor<T> logits = model_forward(e.inputs, frozen, fwd, &cache);
    Tensor<T> dlogits;
    lm_loss(logits, std::span<const Token>(e.targets), std::span<const std::uint8_t>(e.mask),
            &dlogits);
    model_backward(frozen, cache, dlogits, store, bwd);
    for (std::size_t i = 0; i < seq.size(); ++i) report.scores[i] += seq[i];
  }
  for (double& v : report.scores.data()) v /= static_cast<double>(data.size());
  return report;
}

}  // namespace midus

#endif  // MIDUS_TRAIN_HEAD_IMPORTANCE_HPP_
