// Copyright 2026 The MIDUS Authors.
// SPDX-License-Identifier: Apache-2.0

#ifndef MIDUS_LAYERS_MEMORY_BLOCK_HPP_
#define MIDUS_LAYERS_MEMORY_BLOCK_HPP_

#include <cmath>
#include <cstddef>
#include <string>
#include <string_view>

#include "midus/core/attention.hpp"
#include "midus/core/transformer_block.hpp"
#include "midus/layers/query_norm.hpp"
#include "midus/memory/banks.hpp"
#include "midus/memory/config.hpp"
#include "midus/memory/retrieval.hpp"

namespace midus {

enum class MemoryKind { linear, pkm, hml };

inline std::string_view to_string(MemoryKind kind) {
  switch (kind) {
    case MemoryKind::linear: return "linear";
    case MemoryKind::pkm: return "pkm";
    case MemoryKind::hml: return "hml";
  }
  return "?";
}

inline MemoryKind parse_memory_kind(std::string_view name) {
  if (name == "linear") return MemoryKind::linear;
  if (name == "pkm") return MemoryKind::pkm;
  if (name == "hml") return MemoryKind::hml;
  throw ConfigError("unknown memory kind '" + std::string(name) +
                    "' (expected linear, pkm or hml)");
}

/// Pipeline switches. The HML ablations are expressed as toggles so a sweep
/// over variants is a configuration change.
struct MemoryToggles {
  bool query_batchnorm = false;
  bool query_layernorm = false;
  bool internal_residual = false;   // HML: a' = x + Attn'(norm(x))
  bool output_projection = false;   // HML: keep the attention output projection

  friend bool operator==(const MemoryToggles&, const MemoryToggles&) = default;
};

struct MemoryLayerKind {
  MemoryKind kind = MemoryKind::hml;
  MemoryToggles toggles;

  /// Linear and PKM batch-normalize their queries; HML uses raw head outputs.
  static MemoryLayerKind defaults(MemoryKind kind) {
    MemoryLayerKind k{kind, {}};
    k.toggles.query_batchnorm = kind != MemoryKind::hml;
    return k;
  }

  friend bool operator==(const MemoryLayerKind&, const MemoryLayerKind&) = default;
};

/// A Memory block: attention followed by a key-value memory layer whose
/// output is added to the block input, y = x + m.
///
/// Which tensors are populated depends on `layer.kind`:
///   linear  query_proj [d x d], flat_keys [H x N x d_h], values [N x d]
///   pkm     query_proj [d x d], product_keys,           values [N x d]
///   hml     product_keys, hive (attention output projection only if toggled)
template <Real T>
struct MemoryBlockParams {
  MemoryLayerKind layer;
  MemoryConfig cfg;
  Tensor<T> attn_norm;
  AttentionParams<T> attn;
  Tensor<T> query_proj;
  Tensor<T> flat_keys;
  ProductKeyBank<T> product_keys;
  Tensor<T> values;
  ValueBank<T> hive;
  BatchNormStats<T> query_stats;  // buffer, not trained

  bool attention_projects() const {
    return layer.kind != MemoryKind::hml || layer.toggles.output_projection;
  }

  /// Identity-preserving construction: attention (and its norm) copied from
  /// `source`, value tables zero, keys and transforms random.
  static MemoryBlockParams from_attention(const MemoryLayerKind& layer,
                                          const MemoryConfig& cfg,
                                          const Tensor<T>& source_norm,
                                          const AttentionParams<T>& source,
                                          Rng& rng) {
    cfg.validate();
    if (source.heads != cfg.heads || source.model_dim() != cfg.model_dim) {
      throw ConfigError("memory block: attention has " +
                        std::to_string(source.heads) + " heads of width " +
                        std::to_string(source.model_dim()) +
                        ", memory config expects " + std::to_string(cfg.heads) +
                        " x " + std::to_string(cfg.model_dim));
    }
    MemoryBlockParams p;
    p.layer = layer;
    p.cfg = cfg;
    p.attn_norm = source_norm;
    p.attn = source;
    if (!p.attention_projects()) p.attn.wo = Tensor<T>();
    const std::size_t d = cfg.model_dim, dh = cfg.head_dim(), n = cfg.num_keys();
    switch (layer.kind) {
      case MemoryKind::linear:
        p.query_proj = random_normal<T>({d, d}, rng, 1.0 / std::sqrt(double(d)));
        p.flat_keys = random_normal<T>({cfg.heads, n, dh}, rng,
                                       1.0 / std::sqrt(double(dh)));
        p.values = Tensor<T>({n, d});
        break;
      case MemoryKind::pkm:
        p.query_proj = random_normal<T>({d, d}, rng, 1.0 / std::sqrt(double(d)));
        p.product_keys = ProductKeyBank<T>::random(cfg, rng);
        p.values = Tensor<T>({n, d});
        break;
      case MemoryKind::hml:
        p.product_keys = ProductKeyBank<T>::random(cfg, rng);
        p.hive = ValueBank<T>::identity_init(cfg, rng);
        break;
    }
    p.query_stats = BatchNormStats<T>::fresh(d);
    return p;
  }

  friend bool operator==(const MemoryBlockParams&, const MemoryBlockParams&) = default;
};

template <Real T>
struct MemoryForwardOptions {
  Mode mode = Mode::eval;
  RetrievalOptions retrieval;
  const ValueCache<T>* value_cache = nullptr;  // HML inference shortcut
};

template <Real T>
struct MemoryLayerCache {
  Tensor<T> input;      // a (linear/pkm) or a' (hml)
  Tensor<T> projected;  // after query projection (== input for hml)
  NormCache<T> batchnorm;
  NormCache<T> layernorm;
  Tensor<T> queries;    // final queries [s x d]
  RetrievalResult<T> retrieval;
  Tensor<T> mixed;      // hml: weighted base rows per (token, head) [s x H*d_h]
};

template <Real T>
struct MemoryBlockCache {
  Tensor<T> input;
  AttentionCache<T> attn;
  MemoryLayerCache<T> layer;
};

/// Memory layer m = Mem(a) for every kind.
template <Real T>
Tensor<T> memory_layer_forward(const Tensor<T>& a, const MemoryBlockParams<T>& p,
                               const MemoryForwardOptions<T>& opts = {},
                               MemoryLayerCache<T>* cache = nullptr) {
  const MemoryConfig& cfg = p.cfg;
  const std::size_t s = a.rows(), d = cfg.model_dim, heads = cfg.heads,
                    dh = cfg.head_dim(), k = cfg.top_k;
  detail::require_shape(a.rank() == 2 && a.cols() == d,
                        "memory layer input " + shape_string(a.shape()));
  Tensor<T> projected =
      p.layer.kind == MemoryKind::hml ? a : matmul(a, p.query_proj);
  Tensor<T> q = projected;
  if (p.layer.toggles.query_batchnorm) {
    q = batchnorm_query(q, p.query_stats, opts.mode,
                        cache ? &cache->batchnorm : nullptr);
  }
  if (p.layer.toggles.query_layernorm) {
    q = head_layernorm(q, heads, cache ? &cache->layernorm : nullptr);
  }

  RetrievalResult<T> res;
  if (p.layer.kind == MemoryKind::linear) {
    res = RetrievalResult<T>::allocate(s, heads, k);
    Tensor<T> head_q({s, dh});
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t r = 0; r < s; ++r)
        for (std::size_t c = 0; c < dh; ++c) head_q.at(r, c) = q.at(r, h * dh + c);
      const Tensor<T> scores =
          score_flat_keys(head_q, p.flat_keys.slab(h), opts.retrieval.counter);
      res.set_head(h, flat_topk(scores, k));
    }
  } else {
    res = product_key_retrieve(q, p.product_keys, k, opts.retrieval);
  }

  Tensor<T> m({s, d});
  Tensor<T> mixed;
  if (p.layer.kind == MemoryKind::hml) {
    if (opts.value_cache && !cache) {
      m = hive_aggregate_cached(res, *opts.value_cache);
    } else {
      mixed = Tensor<T>({s, heads * dh});
      for (std::size_t r = 0; r < s; ++r)
        for (std::size_t h = 0; h < heads; ++h)
          for (std::size_t j = 0; j < k; ++j) {
            const T w = res.weights[res.offset(r, h) + j];
            const auto v = p.hive.base.row(res.indices[res.offset(r, h) + j]);
            for (std::size_t c = 0; c < dh; ++c) mixed.at(r, h * dh + c) += w * v[c];
          }
      m = hive_aggregate(res, p.hive);
    }
  } else {
    for (std::size_t r = 0; r < s; ++r) {
      auto out = m.row(r);
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t j = 0; j < k; ++j) {
          const T w = res.weights[res.offset(r, h) + j];
          const auto v = p.values.row(res.indices[res.offset(r, h) + j]);
          for (std::size_t c = 0; c < d; ++c) out[c] += w * v[c];
        }
    }
  }
  ensure_finite(m, "memory_layer_forward");
  if (cache) {
    cache->input = a;
    cache->projected = std::move(projected);
    cache->queries = std::move(q);
    cache->retrieval = std::move(res);
    cache->mixed = std::move(mixed);
  }
  return m;
}

/// Memory block y = x + Mem(a). For linear/pkm a = x + Attn(norm(x)); for
/// hml a' = Attn'(norm(x)) (plus x with the internal-residual toggle).
template <Real T>
Tensor<T> memory_block_forward(const Tensor<T>& x, const MemoryBlockParams<T>& p,
                               const MemoryForwardOptions<T>& opts = {},
                               MemoryBlockCache<T>* cache = nullptr,
                               std::span<const double> head_scale = {}) {
  detail::require_shape(p.attn.heads == p.cfg.heads,
                        "memory block: attention/memory head count mismatch");
  Tensor<T> a = causal_attention(rms_norm(x, p.attn_norm, kNormEps<T>), p.attn,
                                 p.attention_projects(),
                                 cache ? &cache->attn : nullptr, head_scale);
  const bool residual =
      p.layer.kind != MemoryKind::hml || p.layer.toggles.internal_residual;
  if (residual) add_inplace(a, x);
  Tensor<T> y = add(x, memory_layer_forward(a, p, opts,
                                            cache ? &cache->layer : nullptr));
  if (cache) cache->input = x;
  return y;
}

template <Real T>
Tensor<T> linear_memory_forward(const Tensor<T>& a, const MemoryBlockParams<T>& p,
                                const MemoryForwardOptions<T>& opts = {}) {
  if (p.layer.kind != MemoryKind::linear) throw ConfigError("expected a linear memory");
  return memory_layer_forward(a, p, opts);
}

template <Real T>
Tensor<T> pkm_memory_forward(const Tensor<T>& a, const MemoryBlockParams<T>& p,
                             const MemoryForwardOptions<T>& opts = {}) {
  if (p.layer.kind != MemoryKind::pkm) throw ConfigError("expected a pkm memory");
  return memory_layer_forward(a, p, opts);
}

template <Real T>
Tensor<T> hml_block_forward(const Tensor<T>& x, const MemoryBlockParams<T>& p,
                            const MemoryForwardOptions<T>& opts = {}) {
  if (p.layer.kind != MemoryKind::hml) throw ConfigError("expected an hml memory");
  return memory_block_forward(x, p, opts);
}

}  // namespace midus

#endif  // MIDUS_LAYERS_MEMORY_BLOCK_HPP_
