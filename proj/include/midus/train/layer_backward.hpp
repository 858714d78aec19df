// Copyright 2026 The MIDUS Authors.
// SPDX-License-Identifier: Apache-2.0

#ifndef MIDUS_TRAIN_LAYER_BACKWARD_HPP_
#define MIDUS_TRAIN_LAYER_BACKWARD_HPP_

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "midus/core/attention.hpp"
#include "midus/core/feed_forward.hpp"
#include "midus/core/transformer_block.hpp"
#include "midus/layers/memory_block.hpp"
#include "midus/train/scatter_backward.hpp"

// Hand-derived backward passes. Every function takes the forward cache and
// the upstream gradient, returns the input gradient, and accumulates
// parameter gradients into `grads` when it is non-null (null = frozen).
// Top-k selection is treated as fixed routing: gradients reach keys and
// values only through the selected entries.

namespace midus {

/// Backward of y = rms_norm(x, gain).
template <Real T>
Tensor<T> rms_norm_backward(const Tensor<T>& x, const Tensor<T>& gain,
                            const Tensor<T>& dy, Tensor<T>* dgain) {
  const std::size_t s = x.rows(), d = x.cols();
  const T eps = kNormEps<T>;
  Tensor<T> dx(x.shape());
  for (std::size_t r = 0; r < s; ++r) {
    const auto xr = x.row(r);
    const auto gr = dy.row(r);
    T ms{0};
    for (T v : xr) ms += v * v;
    ms /= static_cast<T>(d);
    const T inv = T{1} / std::sqrt(ms + eps);
    T proj{0};
    for (std::size_t c = 0; c < d; ++c) proj += gain[c] * gr[c] * xr[c];
    const T coef = inv * inv * inv * proj / static_cast<T>(d);
    auto out = dx.row(r);
    for (std::size_t c = 0; c < d; ++c) {
      out[c] = inv * gain[c] * gr[c] - coef * xr[c];
      if (dgain) (*dgain)[c] += gr[c] * xr[c] * inv;
    }
  }
  return dx;
}

/// Backward of causal_attention. `dcontext_out`, when given, receives the
/// gradient with respect to the concatenated head outputs.
template <Real T>
Tensor<T> attention_backward(const AttentionCache<T>& cache,
                             const AttentionParams<T>& p, bool project_output,
                             const Tensor<T>& dout, AttentionParams<T>* grads,
                             std::span<const double> head_scale = {},
                             Tensor<T>* dcontext_out = nullptr) {
  const std::size_t s = cache.input.rows(), d = p.model_dim(), heads = p.heads,
                    dh = d / heads;
  Tensor<T> dscaled = dout;
  if (project_output) {
    if (grads) add_inplace(grads->wo, matmul_tn(cache.scaled, dout));
    dscaled = matmul_nt(dout, p.wo);
  }
  Tensor<T> dcontext = std::move(dscaled);
  if (!head_scale.empty()) {
    for (std::size_t i = 0; i < s; ++i)
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t c = 0; c < dh; ++c)
          dcontext.at(i, h * dh + c) *= static_cast<T>(head_scale[h]);
  }
  const T scale = T{1} / std::sqrt(static_cast<T>(dh));
  Tensor<T> dq({s, d}), dk({s, d}), dv({s, d});
  std::vector<T> dp(s);
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < s; ++i) {
      const T* pr = cache.probs.data().data() + (h * s + i) * s;
      const T* gi = dcontext.data().data() + i * d + h * dh;
      T weighted{0};
      for (std::size_t j = 0; j <= i; ++j) {
        const T* vj = cache.v.data().data() + j * d + h * dh;
        T acc{0};
        for (std::size_t c = 0; c < dh; ++c) acc += gi[c] * vj[c];
        dp[j] = acc;
        weighted += pr[j] * acc;
        T* dvj = dv.data().data() + j * d + h * dh;
        for (std::size_t c = 0; c < dh; ++c) dvj[c] += pr[j] * gi[c];
      }
      const T* qi = cache.q.data().data() + i * d + h * dh;
      T* dqi = dq.data().data() + i * d + h * dh;
      for (std::size_t j = 0; j <= i; ++j) {
        const T ds = pr[j] * (dp[j] - weighted) * scale;
        const T* kj = cache.k.data().data() + j * d + h * dh;
        T* dkj = dk.data().data() + j * d + h * dh;
        for (std::size_t c = 0; c < dh; ++c) {
          dqi[c] += ds * kj[c];
          dkj[c] += ds * qi[c];
        }
      }
    }
  }
  detail::apply_rope(dq, heads, -1.0);
  detail::apply_rope(dk, heads, -1.0);
  if (grads) {
    add_inplace(grads->wq, matmul_tn(cache.input, dq));
    add_inplace(grads->wk, matmul_tn(cache.input, dk));
    add_inplace(grads->wv, matmul_tn(cache.input, dv));
  }
  Tensor<T> dx = matmul_nt(dq, p.wq);
  add_inplace(dx, matmul_nt(dk, p.wk));
  add_inplace(dx, matmul_nt(dv, p.wv));
  if (dcontext_out) *dcontext_out = std::move(dcontext);
  return dx;
}

template <Real T>
Tensor<T> feed_forward_backward(const FeedForwardCache<T>& cache,
                                const FeedForwardParams<T>& p, const Tensor<T>& dout,
                                FeedForwardParams<T>* grads) {
  if (grads) add_inplace(grads->w_down, matmul_tn(cache.hidden, dout));
  const Tensor<T> dhidden = matmul_nt(dout, p.w_down);
  Tensor<T> dgate(cache.gate.shape()), dup(cache.up.shape());
  for (std::size_t i = 0; i < dhidden.size(); ++i) {
    const T z = cache.gate[i];
    const T sg = sigmoid(z);
    const T silu = z * sg;
    dup[i] = dhidden[i] * silu;
    dgate[i] = dhidden[i] * cache.up[i] * sg * (T{1} + z * (T{1} - sg));
  }
  if (grads) {
    add_inplace(grads->w_gate, matmul_tn(cache.input, dgate));
    add_inplace(grads->w_up, matmul_tn(cache.input, dup));
  }
  Tensor<T> dx = matmul_nt(dgate, p.w_gate);
  add_inplace(dx, matmul_nt(dup, p.w_up));
  return dx;
}

template <Real T>
Tensor<T> transformer_block_backward(const TransformerBlockCache<T>& cache,
                                     const TransformerBlockParams<T>& p,
                                     const Tensor<T>& dy,
                                     TransformerBlockParams<T>* grads,
                                     std::span<const double> head_scale = {},
                                     Tensor<T>* dcontext_out = nullptr) {
  const Tensor<T> dffn_in =
      feed_forward_backward(cache.ffn, p.ffn, dy, grads ? &grads->ffn : nullptr);
  Tensor<T> da = add(dy, rms_norm_backward(cache.mid, p.ffn_norm, dffn_in,
                                           grads ? &grads->ffn_norm : nullptr));
  const Tensor<T> dattn_in =
      attention_backward(cache.attn, p.attn, true, da,
                         grads ? &grads->attn : nullptr, head_scale, dcontext_out);
  return add(da, rms_norm_backward(cache.input, p.attn_norm, dattn_in,
                                   grads ? &grads->attn_norm : nullptr));
}

/// Backward of batchnorm_query (no learned affine).
template <Real T>
Tensor<T> batchnorm_backward(const NormCache<T>& cache, const Tensor<T>& dy) {
  const std::size_t s = dy.rows(), w = dy.cols();
  Tensor<T> dx(dy.shape());
  for (std::size_t c = 0; c < w; ++c) {
    const T inv = cache.inv_std[c];
    if (!cache.batch_stats) {
      for (std::size_t r = 0; r < s; ++r) dx.at(r, c) = dy.at(r, c) * inv;
      continue;
    }
    T mean_dy{0}, mean_dyx{0};
    for (std::size_t r = 0; r < s; ++r) {
      mean_dy += dy.at(r, c);
      mean_dyx += dy.at(r, c) * cache.normalized.at(r, c);
    }
    mean_dy /= static_cast<T>(s);
    mean_dyx /= static_cast<T>(s);
    for (std::size_t r = 0; r < s; ++r) {
      dx.at(r, c) =
          inv * (dy.at(r, c) - mean_dy - cache.normalized.at(r, c) * mean_dyx);
    }
  }
  return dx;
}

template <Real T>
Tensor<T> head_layernorm_backward(const NormCache<T>& cache, const Tensor<T>& dy,
                                  std::size_t heads) {
  const std::size_t s = dy.rows(), w = dy.cols(), dh = w / heads;
  Tensor<T> dx(dy.shape());
  for (std::size_t r = 0; r < s; ++r) {
    for (std::size_t h = 0; h < heads; ++h) {
      const T inv = cache.inv_std[r * heads + h];
      const T* g = dy.data().data() + r * w + h * dh;
      const T* xh = cache.normalized.data().data() + r * w + h * dh;
      T mean_g{0}, mean_gx{0};
      for (std::size_t c = 0; c < dh; ++c) {
        mean_g += g[c];
        mean_gx += g[c] * xh[c];
      }
      mean_g /= static_cast<T>(dh);
      mean_gx /= static_cast<T>(dh);
      T* o = dx.data().data() + r * w + h * dh;
      for (std::size_t c = 0; c < dh; ++c) o[c] = inv * (g[c] - mean_g - xh[c] * mean_gx);
    }
  }
  return dx;
}

namespace detail {

/// dL/d(score) for each selected entry from dL/d(weight), through the
/// softmax over the selected scores.
template <Real T>
std::vector<T> selected_score_grads(const RetrievalResult<T>& res,
                                    const std::vector<T>& dweights) {
  std::vector<T> dscore(dweights.size());
  const std::size_t k = res.k;
  for (std::size_t g = 0; g < res.tokens * res.heads; ++g) {
    T weighted{0};
    for (std::size_t j = 0; j < k; ++j) weighted += res.weights[g * k + j] * dweights[g * k + j];
    for (std::size_t j = 0; j < k; ++j) {
      dscore[g * k + j] = res.weights[g * k + j] * (dweights[g * k + j] - weighted);
    }
  }
  return dscore;
}

}  // namespace detail

/// Backward of memory_layer_forward. Value-table gradients go through the
/// deduplicated scatter; `stats` collects its instrumentation.
template <Real T>
Tensor<T> memory_layer_backward(const MemoryLayerCache<T>& cache,
                                const MemoryBlockParams<T>& p, const Tensor<T>& dm,
                                MemoryBlockParams<T>* grads,
                                ScatterStats* stats = nullptr) {
  const MemoryConfig& cfg = p.cfg;
  const RetrievalResult<T>& res = cache.retrieval;
  const std::size_t s = dm.rows(), d = cfg.model_dim, heads = cfg.heads,
                    dh = cfg.head_dim(), k = cfg.top_k;
  const std::span<const T> weights = res.weights.data();

  // Values and dL/d(weights).
  std::vector<T> dweights;
  if (p.layer.kind == MemoryKind::hml) {
    Tensor<T> dmix({s * heads, dh});
    for (std::size_t r = 0; r < s; ++r) {
      for (std::size_t h = 0; h < heads; ++h) {
        const T* g = dm.data().data() + r * d + h * dh;
        const T* wh = p.hive.transforms.data().data() + h * dh * dh;
        T* out = dmix.data().data() + (r * heads + h) * dh;
        for (std::size_t a = 0; a < dh; ++a)
          for (std::size_t b = 0; b < dh; ++b) out[b] += wh[a * dh + b] * g[a];
        if (grads) {
          T* gw = grads->hive.transforms.data().data() + h * dh * dh;
          const T* mix = cache.mixed.data().data() + r * d + h * dh;
          for (std::size_t a = 0; a < dh; ++a)
            for (std::size_t b = 0; b < dh; ++b) gw[a * dh + b] += g[a] * mix[b];
        }
      }
    }
    if (grads) dedup_scatter_backward_into(dmix, res.indices, weights, grads->hive.base, stats);
    dweights = weight_grad_backward(dmix, res.indices, p.hive.base);
  } else {
    Tensor<T> expanded({s * heads, d});
    for (std::size_t r = 0; r < s; ++r)
      for (std::size_t h = 0; h < heads; ++h) {
        const auto src = dm.row(r);
        std::copy(src.begin(), src.end(), expanded.row(r * heads + h).begin());
      }
    if (grads) dedup_scatter_backward_into(expanded, res.indices, weights, grads->values, stats);
    dweights = weight_grad_backward(expanded, res.indices, p.values);
  }
  const std::vector<T> dscore = detail::selected_score_grads(res, dweights);

  // Scores -> queries and keys.
  Tensor<T> dq({s, d});
  const Tensor<T>& q = cache.queries;
  if (p.layer.kind == MemoryKind::linear) {
    const std::size_t n = cfg.num_keys();
    for (std::size_t r = 0; r < s; ++r)
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t j = 0; j < k; ++j) {
          const std::size_t off = res.offset(r, h) + j;
          const T g = dscore[off];
          const T* key = p.flat_keys.data().data() + (h * n + res.indices[off]) * dh;
          const T* qh = q.data().data() + r * d + h * dh;
          T* dqh = dq.data().data() + r * d + h * dh;
          for (std::size_t c = 0; c < dh; ++c) dqh[c] += g * key[c];
          if (grads) {
            T* gk = grads->flat_keys.data().data() + (h * n + res.indices[off]) * dh;
            for (std::size_t c = 0; c < dh; ++c) gk[c] += g * qh[c];
          }
        }
  } else {
    const std::size_t n = cfg.sub_keys, dp = cfg.subquery_dim();
    for (std::size_t r = 0; r < s; ++r)
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t j = 0; j < k; ++j) {
          const std::size_t off = res.offset(r, h) + j;
          const T g = dscore[off];
          const GridIndex at = split_index(res.indices[off], n);
          const T* rk = p.product_keys.row_keys.data().data() + (h * n + at.row) * dp;
          const T* ck = p.product_keys.col_keys.data().data() + (h * n + at.col) * dp;
          const T* qr = q.data().data() + r * d + h * dh;
          const T* qc = qr + dp;
          T* dqr = dq.data().data() + r * d + h * dh;
          T* dqc = dqr + dp;
          for (std::size_t c = 0; c < dp; ++c) {
            dqr[c] += g * rk[c];
            dqc[c] += g * ck[c];
          }
          if (grads) {
            T* grk = grads->product_keys.row_keys.data().data() + (h * n + at.row) * dp;
            T* gck = grads->product_keys.col_keys.data().data() + (h * n + at.col) * dp;
            for (std::size_t c = 0; c < dp; ++c) {
              grk[c] += g * qr[c];
              gck[c] += g * qc[c];
            }
          }
        }
  }

  if (p.layer.toggles.query_layernorm) dq = head_layernorm_backward(cache.layernorm, dq, heads);
  if (p.layer.toggles.query_batchnorm) dq = batchnorm_backward(cache.batchnorm, dq);
  if (p.layer.kind == MemoryKind::hml) return dq;
  if (grads) add_inplace(grads->query_proj, matmul_tn(cache.input, dq));
  return matmul_nt(dq, p.query_proj);
}

template <Real T>
Tensor<T> memory_block_backward(const MemoryBlockCache<T>& cache,
                                const MemoryBlockParams<T>& p, const Tensor<T>& dy,
                                MemoryBlockParams<T>* grads,
                                ScatterStats* stats = nullptr,
                                std::span<const double> head_scale = {},
                                Tensor<T>* dcontext_out = nullptr) {
  const Tensor<T> da = memory_layer_backward(cache.layer, p, dy, grads, stats);
  Tensor<T> dx = dy;
  const bool residual =
      p.layer.kind != MemoryKind::hml || p.layer.toggles.internal_residual;
  if (residual) add_inplace(dx, da);
  const Tensor<T> dattn_in =
      attention_backward(cache.attn, p.attn, p.attention_projects(), da,
                         grads ? &grads->attn : nullptr, head_scale, dcontext_out);
  add_inplace(dx, rms_norm_backward(cache.input, p.attn_norm, dattn_in,
                                    grads ? &grads->attn_norm : nullptr));
  return dx;
}

}  // namespace midus

#endif  // MIDUS_TRAIN_LAYER_BACKWARD_HPP_
