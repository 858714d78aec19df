// Copyright 2026 The MIDUS Authors.
// SPDX-License-Identifier: Apache-2.0

#ifndef MIDUS_TRAIN_MODEL_BACKWARD_HPP_
#define MIDUS_TRAIN_MODEL_BACKWARD_HPP_

#include <cstddef>
#include <functional>
#include <map>
#include <vector>

#include "midus/core/model.hpp"
#include "midus/core/parameters.hpp"
#include "midus/train/layer_backward.hpp"

namespace midus {

/// One gradient buffer per parameter, shaped like the model it belongs to.
template <Real T>
struct GradStore {
  ModelSpec<T> grads;
  bool accumulate = false;  // keep sums across backward calls until zero()

  explicit GradStore(const ModelSpec<T>& model) : grads(zeros_like(model)) {}

  void zero() {
    visit_parameters(grads, [](const ParamInfo&, Tensor<T>& t) { t.fill(T{0}); });
  }

  /// Sum of |g| over all buffers (or only frozen ones under `model`'s mask).
  double abs_sum(const ModelSpec<T>& model, bool frozen_only) const {
    double total = 0.0;
    visit_parameters(grads, [&](const ParamInfo& info, const Tensor<T>& t) {
      if (frozen_only && is_trainable(model, info)) return;
      for (T v : t.data()) total += std::abs(static_cast<double>(v));
    });
    return total;
  }
};

/// Called with (block index, head outputs [s x d], dL/d head outputs).
template <Real T>
using HeadGradientObserver =
    std::function<void(std::size_t, const Tensor<T>&, const Tensor<T>&)>;

template <Real T>
struct BackwardOptions {
  /// Ignore the trainable mask and produce every parameter gradient.
  bool all_parameters = false;
  /// Propagate through every block even when nothing below needs gradients.
  bool full_depth = false;
  HeadGradientObserver<T> head_observer;
  const std::map<std::size_t, std::vector<double>>* head_scales = nullptr;
  ScatterStats* scatter_stats = nullptr;
};

/// Backpropagates dL/dlogits through a cached forward pass, adding parameter
/// gradients into `store`. Frozen blocks pass gradients through without
/// computing their parameter gradients, and the sweep stops at the lowest
/// block that still needs a gradient.
template <Real T>
void model_backward(const ModelSpec<T>& spec, const ModelCache<T>& cache,
                    const Tensor<T>& dlogits, GradStore<T>& store,
                    const BackwardOptions<T>& opts = {}) {
  if (cache.blocks.size() != spec.blocks.size()) {
    throw Error("model_backward: missing or stale forward cache");
  }
  if (!store.accumulate) store.zero();
  ModelSpec<T>& g = store.grads;
  const bool outer = opts.all_parameters || spec.train_embeddings;

  if (outer) add_inplace(g.unembedding, matmul_tn(cache.final_normed, dlogits));
  const Tensor<T> dnormed = matmul_nt(dlogits, spec.unembedding);
  Tensor<T> dx = rms_norm_backward(cache.final_input, spec.final_norm, dnormed,
                                   outer ? &g.final_norm : nullptr);

  std::size_t lowest = spec.blocks.size();
  if (opts.all_parameters || opts.full_depth || spec.train_embeddings || opts.head_observer) {
    lowest = 0;
  } else {
    for (std::size_t l = 0; l < spec.blocks.size(); ++l)
      if (spec.trainable[l]) { lowest = l; break; }
  }

  for (std::size_t l = spec.blocks.size(); l-- > lowest;) {
    const bool train = opts.all_parameters || spec.trainable[l];
    std::span<const double> scale;
    if (opts.head_scales) {
      if (auto it = opts.head_scales->find(l); it != opts.head_scales->end()) scale = it->second;
    }
    Tensor<T> dcontext;
    Tensor<T>* dctx = opts.head_observer ? &dcontext : nullptr;
    if (const auto* tb = std::get_if<TransformerBlockParams<T>>(&spec.blocks[l])) {
      const auto& c = std::get<TransformerBlockCache<T>>(cache.blocks[l]);
      auto* gb = train ? &std::get<TransformerBlockParams<T>>(g.blocks[l]) : nullptr;
      dx = transformer_block_backward(c, *tb, dx, gb, scale, dctx);
      if (dctx) opts.head_observer(l, c.attn.context, dcontext);
    } else {
      const auto& mb = std::get<MemoryBlockParams<T>>(spec.blocks[l]);
      const auto& c = std::get<MemoryBlockCache<T>>(cache.blocks[l]);
      auto* gb = train ? &std::get<MemoryBlockParams<T>>(g.blocks[l]) : nullptr;
      dx = memory_block_backward(c, mb, dx, gb, opts.scatter_stats, scale, dctx);
      if (dctx) opts.head_observer(l, c.attn.context, dcontext);
    }
  }

  if (lowest == 0 && outer) {
    const std::vector<T> ones(cache.tokens.size(), T{1});
    dedup_scatter_backward_into(dx, std::span<const std::uint32_t>(cache.tokens),
                                std::span<const T>(ones), g.embedding);
  }
}

/// Loss and gradients for one token sequence (inputs = seq[0..n-2], targets
/// = seq[1..n-1]), accumulating into `store`.
template <Real T>
T loss_and_gradients(const ModelSpec<T>& spec, std::span<const Token> inputs,
                     std::span<const Token> targets, GradStore<T>& store,
                     const ForwardOptions<T>& fwd = {},
                     const BackwardOptions<T>& bwd = {},
                     std::span<const std::uint8_t> mask = {},
                     ModelCache<T>* keep_cache = nullptr) {
  ModelCache<T> local;
  ModelCache<T>& cache = keep_cache ? *keep_cache : local;
  const Tensor<T> logits = model_forward(inputs, spec, fwd, &cache);
  Tensor<T> dlogits;
  const T loss = lm_loss(logits, targets, mask, &dlogits);
  model_backward(spec, cache, dlogits, store, bwd);
  return loss;
}

}  // namespace midus

#endif  // MIDUS_TRAIN_MODEL_BACKWARD_HPP_
