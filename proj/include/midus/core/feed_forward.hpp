// Copyright 2026 The MIDUS Authors.
// SPDX-License-Identifier: Apache-2.0

#ifndef MIDUS_CORE_FEED_FORWARD_HPP_
#define MIDUS_CORE_FEED_FORWARD_HPP_

#include <cmath>
#include <cstddef>

#include "midus/numerics/ops.hpp"
#include "midus/numerics/rng.hpp"
#include "midus/numerics/tensor.hpp"

namespace midus {

/// Gated feed-forward: down( silu(x * gate) . (x * up) ).
template <Real T>
struct FeedForwardParams {
  Tensor<T> w_gate;  // [d x d_ff]
  Tensor<T> w_up;    // [d x d_ff]
  Tensor<T> w_down;  // [d_ff x d]

  static FeedForwardParams random(std::size_t d, std::size_t d_ff, Rng& rng,
                                  double std) {
    return {random_normal<T>({d, d_ff}, rng, std),
            random_normal<T>({d, d_ff}, rng, std),
            random_normal<T>({d_ff, d}, rng, std)};
  }

  friend bool operator==(const FeedForwardParams&, const FeedForwardParams&) = default;
};

template <Real T>
struct FeedForwardCache {
  Tensor<T> input;   // [s x d]
  Tensor<T> gate;    // pre-activation [s x d_ff]
  Tensor<T> up;      // [s x d_ff]
  Tensor<T> hidden;  // silu(gate) * up
};

template <Real T>
constexpr T sigmoid(T z) {
  return T{1} / (T{1} + std::exp(-z));
}

template <Real T>
Tensor<T> feed_forward(const Tensor<T>& x, const FeedForwardParams<T>& p,
                       FeedForwardCache<T>* cache = nullptr) {
  Tensor<T> gate = matmul(x, p.w_gate);
  Tensor<T> up = matmul(x, p.w_up);
  Tensor<T> hidden(gate.shape());
  for (std::size_t i = 0; i < gate.size(); ++i) {
    hidden[i] = gate[i] * sigmoid(gate[i]) * up[i];
  }
  Tensor<T> out = matmul(hidden, p.w_down);
  ensure_finite(out, "feed_forward");
  if (cache) {
    cache->input = x;
    cache->gate = std::move(gate);
    cache->up = std::move(up);
    cache->hidden = std::move(hidden);
  }
  return out;
}

}  // namespace midus

#endif  // MIDUS_CORE_FEED_FORWARD_HPP_
