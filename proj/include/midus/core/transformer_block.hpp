// Copyright 2026 The MIDUS Authors.
// SPDX-License-Identifier: Apache-2.0

#ifndef MIDUS_CORE_TRANSFORMER_BLOCK_HPP_
#define MIDUS_CORE_TRANSFORMER_BLOCK_HPP_

#include <cstddef>
#include <span>

#include "midus/core/attention.hpp"
#include "midus/core/feed_forward.hpp"
#include "midus/numerics/ops.hpp"

namespace midus {

template <Real T>
inline constexpr T kNormEps = static_cast<T>(1e-5);

/// Pre-norm block:  a = x + Attn(norm(x));  y = a + FFN(norm(a)).
template <Real T>
struct TransformerBlockParams {
  Tensor<T> attn_norm;  // [d]
  AttentionParams<T> attn;
  Tensor<T> ffn_norm;   // [d]
  FeedForwardParams<T> ffn;

  static TransformerBlockParams random(std::size_t d, std::size_t heads,
                                       std::size_t d_ff, Rng& rng, double std) {
    TransformerBlockParams b;
    b.attn_norm = Tensor<T>({d}, T{1});
    b.attn = AttentionParams<T>::random(d, heads, rng, std);
    b.ffn_norm = Tensor<T>({d}, T{1});
    b.ffn = FeedForwardParams<T>::random(d, d_ff, rng, std);
    return b;
  }

  friend bool operator==(const TransformerBlockParams&,
                         const TransformerBlockParams&) = default;
};

template <Real T>
struct TransformerBlockCache {
  Tensor<T> input;
  AttentionCache<T> attn;
  Tensor<T> mid;  // a
  FeedForwardCache<T> ffn;
};

template <Real T>
Tensor<T> transformer_block_forward(const Tensor<T>& x,
                                    const TransformerBlockParams<T>& p,
                                    TransformerBlockCache<T>* cache = nullptr,
                                    std::span<const double> head_scale = {}) {
  Tensor<T> a = add(x, causal_attention(rms_norm(x, p.attn_norm, kNormEps<T>),
                                        p.attn, true,
                                        cache ? &cache->attn : nullptr,
                                        head_scale));
  Tensor<T> y = add(a, feed_forward(rms_norm(a, p.ffn_norm, kNormEps<T>), p.ffn,
                                    cache ? &cache->ffn : nullptr));
  if (cache) {
    cache->input = x;
    cache->mid = std::move(a);
  }
  return y;
}

}  // namespace midus

#endif  // MIDUS_CORE_TRANSFORMER_BLOCK_HPP_
