// Copyright 2026 The MIDUS Authors.
// SPDX-License-Identifier: Apache-2.0

#ifndef MIDUS_CORE_ATTENTION_HPP_
#define MIDUS_CORE_ATTENTION_HPP_

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "midus/numerics/ops.hpp"
#include "midus/numerics/rng.hpp"
#include "midus/numerics/tensor.hpp"

namespace midus {

inline constexpr double kRopeBase = 10000.0;

/// Multi-head attention weights, all [d x d]. An empty `wo` means the layer
/// returns the raw concatenation of head outputs.
template <Real T>
struct AttentionParams {
  std::size_t heads = 1;
  Tensor<T> wq, wk, wv, wo;

  bool has_output_projection() const noexcept { return !wo.empty(); }
  std::size_t model_dim() const { return wq.rows(); }
  std::size_t head_dim() const { return model_dim() / heads; }

  static AttentionParams random(std::size_t d, std::size_t heads, Rng& rng,
                                double std, bool with_output = true) {
    if (heads == 0 || d % heads != 0 || (d / heads) % 2 != 0) {
      throw ShapeError("attention: d=" + std::to_string(d) +
                       " must split into an even head width over " +
                       std::to_string(heads) + " heads");
    }
    AttentionParams p;
    p.heads = heads;
    p.wq = random_normal<T>({d, d}, rng, std);
    p.wk = random_normal<T>({d, d}, rng, std);
    p.wv = random_normal<T>({d, d}, rng, std);
    if (with_output) p.wo = random_normal<T>({d, d}, rng, std);
    return p;
  }

  friend bool operator==(const AttentionParams&, const AttentionParams&) = default;
};

/// Activations kept for the backward pass.
template <Real T>
struct AttentionCache {
  Tensor<T> input;    // [s x d] normalized input
  Tensor<T> q, k, v;  // [s x d], q and k after rotary embedding
  Tensor<T> probs;    // [H x s x s], zero above the diagonal
  Tensor<T> context;  // [s x d] concatenated head outputs (before scaling)
  Tensor<T> scaled;   // context with per-head scale applied (if any)
};

namespace detail {

/// Rotates consecutive pairs within each head by position-dependent angles.
/// `sign` = -1 applies the inverse rotation (used by the backward pass).
template <Real T>
void apply_rope(Tensor<T>& x, std::size_t heads, double sign = 1.0) {
  const std::size_t s = x.rows(), d = x.cols(), dh = d / heads;
  for (std::size_t pos = 0; pos < s; ++pos) {
    for (std::size_t i = 0; i < dh / 2; ++i) {
      const double freq =
          std::pow(kRopeBase, -2.0 * static_cast<double>(i) / static_cast<double>(dh));
      const double angle = static_cast<double>(pos) * freq;
      const T c = static_cast<T>(std::cos(angle));
      const T sn = static_cast<T>(sign * std::sin(angle));
      for (std::size_t h = 0; h < heads; ++h) {
        T& a = x.at(pos, h * dh + 2 * i);
        T& b = x.at(pos, h * dh + 2 * i + 1);
        const T a0 = a, b0 = b;
        a = a0 * c - b0 * sn;
        b = a0 * sn + b0 * c;
      }
    }
  }
}

}  // namespace detail

/// Causal multi-head scaled dot-product attention with rotary positions.
///
/// With `project_output` false the result is the concatenation of per-head
/// outputs (no output projection). `head_scale`, when non-empty, multiplies
/// each head's output before projection; it exists so analyses can take
/// directional derivatives along a head's activation.
template <Real T>
Tensor<T> causal_attention(const Tensor<T>& x, const AttentionParams<T>& p,
                           bool project_output,
                           AttentionCache<T>* cache = nullptr,
                           std::span<const double> head_scale = {}) {
  const std::size_t d = p.model_dim();
  detail::require_shape(x.rank() == 2 && x.cols() == d,
                        "attention input " + shape_string(x.shape()) +
                            " vs model width " + std::to_string(d));
  if (project_output && !p.has_output_projection()) {
    throw ShapeError("attention: output projection requested but absent");
  }
  const std::size_t s = x.rows(), heads = p.heads, dh = d / heads;
  Tensor<T> q = matmul(x, p.wq), k = matmul(x, p.wk), v = matmul(x, p.wv);
  detail::apply_rope(q, heads);
  detail::apply_rope(k, heads);
  const T scale = T{1} / std::sqrt(static_cast<T>(dh));
  Tensor<T> probs({heads, s, s});
  Tensor<T> context({s, d});
  std::vector<T> row(s);
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < s; ++i) {
      const T* qi = q.data().data() + i * d + h * dh;
      for (std::size_t j = 0; j <= i; ++j) {
        const T* kj = k.data().data() + j * d + h * dh;
        T acc{0};
        for (std::size_t c = 0; c < dh; ++c) acc += qi[c] * kj[c];
        row[j] = acc * scale;
      }
      T* pr = probs.data().data() + (h * s + i) * s;
      softmax_into<T>(std::span<const T>(row).first(i + 1),
                      std::span<T>(pr, i + 1));
      T* out = context.data().data() + i * d + h * dh;
      for (std::size_t j = 0; j <= i; ++j) {
        const T w = pr[j];
        const T* vj = v.data().data() + j * d + h * dh;
        for (std::size_t c = 0; c < dh; ++c) out[c] += w * vj[c];
      }
    }
  }
  Tensor<T> scaled = context;
  if (!head_scale.empty()) {
    detail::require_shape(head_scale.size() == heads, "head_scale length");
    for (std::size_t i = 0; i < s; ++i)
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t c = 0; c < dh; ++c)
          scaled.at(i, h * dh + c) *= static_cast<T>(head_scale[h]);
  }
  Tensor<T> out = project_output ? matmul(scaled, p.wo) : scaled;
  ensure_finite(out, "causal_attention");
  if (cache) {
    cache->input = x;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->probs = std::move(probs);
    cache->context = std::move(context);
    cache->scaled = std::move(scaled);
  }
  return out;
}

}  // namespace midus

#endif  // MIDUS_CORE_ATTENTION_HPP_
