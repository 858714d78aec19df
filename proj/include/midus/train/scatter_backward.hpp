// Copyright 2026 The MIDUS Authors.
// SPDX-License-Identifier: Apache-2.0

#ifndef MIDUS_TRAIN_SCATTER_BACKWARD_HPP_
#define MIDUS_TRAIN_SCATTER_BACKWARD_HPP_

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "midus/numerics/tensor.hpp"

namespace midus {

/// Instrumentation for the deduplicated scatter.
struct ScatterStats {
  std::size_t contributions = 0;  // B * K
  std::size_t unique = 0;         // distinct table rows touched
  std::size_t table_writes = 0;   // row updates into the global table
};

/// Gradient of a weighted bag lookup out[b] = sum_k W[b,k] * table[Idx[b,k]]
/// with respect to the table, accumulated into `grad_table` [V x D].
///
///   1. expand:      G_token[b*K + k] = W[b,k] * G_out[b]
///   2. deduplicate: sorted unique indices plus each contribution's slot
///   3. pre-reduce:  G_agg[u] += G_token[i] in contribution order
///   4. update:      one write per unique row, grad_table[uniq[u]] += G_agg[u]
///
/// Contributions to a row are summed in (b, k) order starting from zero, so
/// with a zeroed `grad_table` the result is bitwise equal to a naive
/// sequential scatter-add.
template <Real T>
void dedup_scatter_backward_into(const Tensor<T>& grad_out,
                                 std::span<const std::uint32_t> indices,
                                 std::span<const T> weights, Tensor<T>& grad_table,
                                 ScatterStats* stats = nullptr) {
  const std::size_t B = grad_out.rows(), D = grad_out.cols();
  detail::require_shape(B > 0 ? indices.size() % B == 0 : indices.empty(),
                        "dedup_scatter_backward: index count not a multiple of B");
  detail::require_shape(weights.size() == indices.size(),
                        "dedup_scatter_backward: weights/indices length");
  detail::require_shape(grad_table.rank() == 2 && grad_table.cols() == D,
                        "dedup_scatter_backward: table width");
  const std::size_t K = B ? indices.size() / B : 0, V = grad_table.rows();
  const std::size_t total = B * K;
  for (std::uint32_t idx : indices) {
    if (idx >= V) {
      throw IndexError("dedup_scatter_backward: index " + std::to_string(idx) +
                       " >= table size " + std::to_string(V));
    }
  }

  std::vector<T> token(total * D);
  for (std::size_t b = 0; b < B; ++b) {
    const auto g = grad_out.row(b);
    for (std::size_t k = 0; k < K; ++k) {
      const T w = weights[b * K + k];
      T* dst = token.data() + (b * K + k) * D;
      for (std::size_t c = 0; c < D; ++c) dst[c] = g[c] * w;
    }
  }

  std::vector<std::uint32_t> unique(indices.begin(), indices.end());
  std::sort(unique.begin(), unique.end());
  unique.erase(std::unique(unique.begin(), unique.end()), unique.end());
  std::vector<std::size_t> inverse(total);
  for (std::size_t i = 0; i < total; ++i) {
    inverse[i] = static_cast<std::size_t>(
        std::lower_bound(unique.begin(), unique.end(), indices[i]) - unique.begin());
  }

  const std::size_t U = unique.size();
  std::vector<T> agg(U * D, T{0});
  for (std::size_t i = 0; i < total; ++i) {
    T* dst = agg.data() + inverse[i] * D;
    const T* src = token.data() + i * D;
    for (std::size_t c = 0; c < D; ++c) dst[c] += src[c];
  }

  for (std::size_t u = 0; u < U; ++u) {
    auto row = grad_table.row(unique[u]);
    const T* src = agg.data() + u * D;
    for (std::size_t c = 0; c < D; ++c) row[c] += src[c];
  }
  if (stats) {
    stats->contributions += total;
    stats->unique += U;
    stats->table_writes += U;
  }
}

template <Real T>
Tensor<T> dedup_scatter_backward(const Tensor<T>& grad_out,
                                 std::span<const std::uint32_t> indices,
                                 std::span<const T> weights, std::size_t table_size,
                                 ScatterStats* stats = nullptr) {
  Tensor<T> grad({table_size, grad_out.cols()});
  dedup_scatter_backward_into(grad_out, indices, weights, grad, stats);
  return grad;
}

/// Gradient with respect to the bag weights: grad_w[b,k] = G_out[b] . table[Idx[b,k]].
template <Real T>
std::vector<T> weight_grad_backward(const Tensor<T>& grad_out,
                                    std::span<const std::uint32_t> indices,
                                    const Tensor<T>& table) {
  const std::size_t B = grad_out.rows(), D = grad_out.cols();
  detail::require_shape(table.cols() == D, "weight_grad_backward: table width");
  const std::size_t K = B ? indices.size() / B : 0;
  std::vector<T> out(indices.size());
  for (std::size_t b = 0; b < B; ++b) {
    const auto g = grad_out.row(b);
    for (std::size_t k = 0; k < K; ++k) {
      const std::uint32_t idx = indices[b * K + k];
      if (idx >= table.rows()) {
        throw IndexError("weight_grad_backward: index " + std::to_string(idx) +
                         " >= table size " + std::to_string(table.rows()));
      }
      const auto v = table.row(idx);
      T acc{0};
      for (std::size_t c = 0; c < D; ++c) acc += g[c] * v[c];
      out[b * K + k] = acc;
    }
  }
  return out;
}

}  // namespace midus

#endif  // MIDUS_TRAIN_SCATTER_BACKWARD_HPP_
