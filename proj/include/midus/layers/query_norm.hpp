// Copyright 2026 The MIDUS Authors.
// SPDX-License-Identifier: Apache-2.0

#ifndef MIDUS_LAYERS_QUERY_NORM_HPP_
#define MIDUS_LAYERS_QUERY_NORM_HPP_

#include <cmath>
#include <cstddef>
#include <vector>

#include "midus/numerics/tensor.hpp"

namespace midus {

enum class Mode { eval, train };

inline constexpr double kQueryNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

/// Running per-feature statistics for batch-normalized queries.
template <Real T>
struct BatchNormStats {
  Tensor<T> running_mean;  // [d_q]
  Tensor<T> running_var;   // [d_q]

  static BatchNormStats fresh(std::size_t width) {
    return {Tensor<T>({width}), Tensor<T>({width}, T{1})};
  }

  friend bool operator==(const BatchNormStats&, const BatchNormStats&) = default;
};

template <Real T>
struct NormCache {
  Tensor<T> normalized;    // output
  std::vector<T> inv_std;  // per feature (batch norm) or per (token, head)
  std::vector<T> mean;
  std::vector<T> var;      // biased batch variance (batch norm, train mode)
  bool batch_stats = false;
};

/// Per-feature standardization of queries [s x d_q]. Train mode uses the
/// batch mean and biased variance over tokens; eval mode the running stats.
template <Real T>
Tensor<T> batchnorm_query(const Tensor<T>& q, const BatchNormStats<T>& stats,
                          Mode mode, NormCache<T>* cache = nullptr) {
  detail::require_shape(q.rank() == 2 && q.rows() >= 1 &&
                            stats.running_mean.size() == q.cols(),
                        "batchnorm_query: shape " + shape_string(q.shape()));
  const std::size_t s = q.rows(), w = q.cols();
  const T eps = static_cast<T>(kQueryNormEps);
  std::vector<T> mean(w), var(w), inv(w);
  for (std::size_t c = 0; c < w; ++c) {
    if (mode == Mode::train) {
      T m{0};
      for (std::size_t r = 0; r < s; ++r) m += q.at(r, c);
      m /= static_cast<T>(s);
      T v{0};
      for (std::size_t r = 0; r < s; ++r) v += (q.at(r, c) - m) * (q.at(r, c) - m);
      v /= static_cast<T>(s);
      mean[c] = m;
      var[c] = v;
    } else {
      mean[c] = stats.running_mean[c];
      var[c] = stats.running_var[c];
    }
    inv[c] = T{1} / std::sqrt(var[c] + eps);
  }
  Tensor<T> out(q.shape());
  for (std::size_t r = 0; r < s; ++r)
    for (std::size_t c = 0; c < w; ++c) out.at(r, c) = (q.at(r, c) - mean[c]) * inv[c];
  if (cache) {
    cache->normalized = out;
    cache->inv_std = std::move(inv);
    cache->mean = std::move(mean);
    cache->var = std::move(var);
    cache->batch_stats = mode == Mode::train;
  }
  return out;
}

/// Momentum update of running statistics from a train-mode batch. The
/// running variance uses the unbiased estimate when more than one token is
/// available.
template <Real T>
void update_running_stats(BatchNormStats<T>& stats, const NormCache<T>& batch,
                          std::size_t tokens) {
  const T m = static_cast<T>(kBatchNormMomentum);
  const T correction =
      tokens > 1 ? static_cast<T>(tokens) / static_cast<T>(tokens - 1) : T{1};
  for (std::size_t c = 0; c < stats.running_mean.size(); ++c) {
    stats.running_mean[c] = (T{1} - m) * stats.running_mean[c] + m * batch.mean[c];
    stats.running_var[c] =
        (T{1} - m) * stats.running_var[c] + m * batch.var[c] * correction;
  }
}

/// Standardizes each head slice of every token (no learned affine).
template <Real T>
Tensor<T> head_layernorm(const Tensor<T>& q, std::size_t heads,
                         NormCache<T>* cache = nullptr) {
  const std::size_t s = q.rows(), w = q.cols(), dh = w / heads;
  detail::require_shape(heads > 0 && w % heads == 0, "head_layernorm widths");
  const T eps = static_cast<T>(kQueryNormEps);
  Tensor<T> out(q.shape());
  std::vector<T> inv(s * heads);
  for (std::size_t r = 0; r < s; ++r) {
    for (std::size_t h = 0; h < heads; ++h) {
      const T* x = q.data().data() + r * w + h * dh;
      T m{0};
      for (std::size_t c = 0; c < dh; ++c) m += x[c];
      m /= static_cast<T>(dh);
      T v{0};
      for (std::size_t c = 0; c < dh; ++c) v += (x[c] - m) * (x[c] - m);
      v /= static_cast<T>(dh);
      const T is = T{1} / std::sqrt(v + eps);
      inv[r * heads + h] = is;
      T* o = out.data().data() + r * w + h * dh;
      for (std::size_t c = 0; c < dh; ++c) o[c] = (x[c] - m) * is;
    }
  }
  if (cache) {
    cache->normalized = out;
    cache->inv_std = std::move(inv);
  }
  return out;
}

}  // namespace midus

#endif  // MIDUS_LAYERS_QUERY_NORM_HPP_
