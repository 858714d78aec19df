// Copyright 2026 The MIDUS Authors.
// SPDX-License-Identifier: Apache-2.0

#ifndef MIDUS_MEMORY_RETRIEVAL_HPP_
#define MIDUS_MEMORY_RETRIEVAL_HPP_

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "midus/memory/banks.hpp"
#include "midus/numerics/ops.hpp"

namespace midus {

/// Selected composite keys for one head: per token, `k` flat indices sorted
/// by descending pair score, the raw pair scores, and their softmax weights.
template <Real T>
struct HeadSelection {
  std::size_t tokens = 0;
  std::size_t k = 0;
  std::vector<std::uint32_t> indices;  // [s x k]
  std::vector<T> scores;               // [s x k]
  std::vector<T> weights;              // [s x k]

  std::span<const std::uint32_t> token_indices(std::size_t r) const {
    return std::span<const std::uint32_t>(indices).subspan(r * k, k);
  }
  std::span<const T> token_weights(std::size_t r) const {
    return std::span<const T>(weights).subspan(r * k, k);
  }
};

/// Per-token, per-head selections for a whole layer. Produced once by the
/// lookup and consumed verbatim by aggregation and its backward pass.
template <Real T>
struct RetrievalResult {
  std::size_t tokens = 0;
  std::size_t heads = 0;
  std::size_t k = 0;
  std::vector<std::uint32_t> indices;  // [s x H x k]
  std::vector<T> scores;               // [s x H x k]
  Tensor<T> weights;                   // [s x H x k]

  std::size_t offset(std::size_t r, std::size_t h) const {
    return (r * heads + h) * k;
  }

  static RetrievalResult allocate(std::size_t s, std::size_t heads,
                                  std::size_t k) {
    RetrievalResult out;
    out.tokens = s;
    out.heads = heads;
    out.k = k;
    out.indices.assign(s * heads * k, 0);
    out.scores.assign(s * heads * k, T{0});
    out.weights = Tensor<T>({s, heads, k});
    return out;
  }

  void set_head(std::size_t h, const HeadSelection<T>& sel) {
    for (std::size_t r = 0; r < tokens; ++r) {
      for (std::size_t j = 0; j < k; ++j) {
        indices[offset(r, h) + j] = sel.indices[r * k + j];
        scores[offset(r, h) + j] = sel.scores[r * k + j];
        weights[offset(r, h) + j] = sel.weights[r * k + j];
      }
    }
  }
};

namespace detail {

template <Real T>
void finish_selection(HeadSelection<T>& sel, std::size_t r,
                      const std::vector<Scored<T>>& picked,
                      const std::vector<std::uint32_t>& flat_of) {
  const std::size_t k = sel.k;
  for (std::size_t j = 0; j < k; ++j) {
    sel.indices[r * k + j] = flat_of[picked[j].index];
    sel.scores[r * k + j] = picked[j].score;
  }
  softmax_into<T>(std::span<const T>(sel.scores).subspan(r * k, k),
                  std::span<T>(sel.weights).subspan(r * k, k));
  for (std::size_t a = 0; a < k; ++a) {
    for (std::size_t b = a + 1; b < k; ++b) {
      if (sel.indices[r * k + a] == sel.indices[r * k + b]) {
        throw Error("retrieval selected a duplicate key index");
      }
    }
  }
}

template <Real T>
HeadSelection<T> make_selection(std::size_t s, std::size_t k) {
  HeadSelection<T> sel;
  sel.tokens = s;
  sel.k = k;
  sel.indices.assign(s * k, 0);
  sel.scores.assign(s * k, T{0});
  sel.weights.assign(s * k, T{0});
  return sel;
}

}  // namespace detail

/// Two-stage product-key selection: per-axis top-k, then top-k over the k^2
/// candidate pair sums. Exact with respect to the full n^2 grid because any
/// pair in the global top-k has both coordinates in the per-axis top-k sets
/// (the shared tie-break makes this hold under ties too).
template <Real T>
HeadSelection<T> two_stage_topk(const Tensor<T>& row_scores,
                                const Tensor<T>& col_scores, std::size_t k) {
  detail::require_shape(row_scores.shape() == col_scores.shape() &&
                            row_scores.rank() == 2,
                        "two_stage_topk: row/col score shapes differ");
  const std::size_t s = row_scores.rows(), n = row_scores.cols();
  if (k < 1 || k > n) {
    throw ShapeError("two_stage_topk: k=" + std::to_string(k) +
                     " must lie in [1, n=" + std::to_string(n) + "]");
  }
  auto sel = detail::make_selection<T>(s, k);
  std::vector<T> pair_scores(k * k);
  std::vector<std::uint32_t> pair_flat(k * k);
  std::vector<std::size_t> rows(k), cols(k);
  for (std::size_t r = 0; r < s; ++r) {
    const auto srow = row_scores.row(r);
    const auto scol = col_scores.row(r);
    const auto top_rows = topk(srow, k);
    const auto top_cols = topk(scol, k);
    for (std::size_t j = 0; j < k; ++j) {
      rows[j] = top_rows[j].index;
      cols[j] = top_cols[j].index;
    }
    // Candidates enumerated in ascending flat order so the positional
    // tie-break of topk coincides with the flat-index tie-break.
    std::sort(rows.begin(), rows.end());
    std::sort(cols.begin(), cols.end());
    for (std::size_t a = 0; a < k; ++a) {
      for (std::size_t b = 0; b < k; ++b) {
        pair_scores[a * k + b] = srow[rows[a]] + scol[cols[b]];
        pair_flat[a * k + b] = static_cast<std::uint32_t>(rows[a] * n + cols[b]);
      }
    }
    detail::finish_selection(sel, r, topk(pair_scores, k), pair_flat);
  }
  return sel;
}

/// Single top-k over the flattened n x n additive score grid.
template <Real T>
HeadSelection<T> fused_cartesian_topk(const Tensor<T>& row_scores,
                                      const Tensor<T>& col_scores,
                                      std::size_t k) {
  detail::require_shape(row_scores.shape() == col_scores.shape() &&
                            row_scores.rank() == 2,
                        "fused_cartesian_topk: row/col score shapes differ");
  const std::size_t s = row_scores.rows(), n = row_scores.cols();
  if (k < 1 || k > n * n) {
    throw ShapeError("fused_cartesian_topk: k=" + std::to_string(k) +
                     " must lie in [1, N=" + std::to_string(n * n) + "]");
  }
  auto sel = detail::make_selection<T>(s, k);
  std::vector<T> grid(n * n);
  std::vector<std::uint32_t> identity(n * n);
  for (std::size_t f = 0; f < n * n; ++f) identity[f] = static_cast<std::uint32_t>(f);
  for (std::size_t r = 0; r < s; ++r) {
    const auto srow = row_scores.row(r);
    const auto scol = col_scores.row(r);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) grid[i * n + j] = srow[i] + scol[j];
    detail::finish_selection(sel, r, topk(grid, k), identity);
  }
  return sel;
}

/// Top-k over one head's flat score matrix [s x N] (the Linear layer).
template <Real T>
HeadSelection<T> flat_topk(const Tensor<T>& scores, std::size_t k) {
  const std::size_t s = scores.rows(), n = scores.cols();
  if (k < 1 || k > n) {
    throw ShapeError("flat_topk: k=" + std::to_string(k) + " must lie in [1, N=" +
                     std::to_string(n) + "]");
  }
  auto sel = detail::make_selection<T>(s, k);
  std::vector<std::uint32_t> identity(n);
  for (std::size_t f = 0; f < n; ++f) identity[f] = static_cast<std::uint32_t>(f);
  for (std::size_t r = 0; r < s; ++r) {
    detail::finish_selection(sel, r, topk(scores.row(r), k), identity);
  }
  return sel;
}

enum class TopkPath { automatic, two_stage, fused };

/// Default token count at or below which `automatic` uses the fused kernel.
inline constexpr std::size_t kDefaultFusedThreshold = 16;

struct RetrievalOptions {
  TopkPath path = TopkPath::automatic;
  std::size_t fused_threshold = kDefaultFusedThreshold;
  MacCounter* counter = nullptr;

  bool use_fused(std::size_t tokens) const {
    return path == TopkPath::fused ||
           (path == TopkPath::automatic && tokens <= fused_threshold);
  }
};

/// Product-key lookup for every head. `queries` is [s x H*2*d_p]; head h
/// reads columns [h*2*d_p, (h+1)*2*d_p).
template <Real T>
RetrievalResult<T> product_key_retrieve(const Tensor<T>& queries,
                                        const ProductKeyBank<T>& bank,
                                        std::size_t k,
                                        const RetrievalOptions& opts = {}) {
  const std::size_t heads = bank.heads(), width = 2 * bank.subquery_dim();
  detail::require_shape(queries.rank() == 2 && queries.cols() == heads * width,
                        "product_key_retrieve: queries " +
                            shape_string(queries.shape()) + " vs " +
                            std::to_string(heads) + " heads of width " +
                            std::to_string(width));
  const std::size_t s = queries.rows();
  auto result = RetrievalResult<T>::allocate(s, heads, k);
  Tensor<T> head_q({s, width});
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t r = 0; r < s; ++r)
      for (std::size_t c = 0; c < width; ++c)
        head_q.at(r, c) = queries.at(r, h * width + c);
    const auto scores = score_subkeys(head_q, bank, h, opts.counter);
    result.set_head(h, opts.use_fused(s)
                           ? fused_cartesian_topk(scores.row, scores.col, k)
                           : two_stage_topk(scores.row, scores.col, k));
  }
  return result;
}

/// HIVE aggregation: per (token, head) weighted sum of base rows, mapped by
/// the head transform, heads concatenated to width H*d_h.
template <Real T>
Tensor<T> hive_aggregate(const RetrievalResult<T>& res, const ValueBank<T>& bank) {
  const std::size_t dh = bank.head_dim(), n = bank.num_keys();
  detail::require_shape(res.heads == bank.heads(),
                        "hive_aggregate: head count mismatch");
  Tensor<T> out({res.tokens, res.heads * dh});
  std::vector<T> mixed(dh);
  for (std::size_t r = 0; r < res.tokens; ++r) {
    for (std::size_t h = 0; h < res.heads; ++h) {
      std::fill(mixed.begin(), mixed.end(), T{0});
      for (std::size_t j = 0; j < res.k; ++j) {
        const std::size_t idx = res.indices[res.offset(r, h) + j];
        if (idx >= n) throw IndexError("hive_aggregate: key index out of range");
        const T w = res.weights[res.offset(r, h) + j];
        const auto v = bank.base.row(idx);
        for (std::size_t c = 0; c < dh; ++c) mixed[c] += w * v[c];
      }
      const T* wh = bank.transforms.data().data() + h * dh * dh;
      for (std::size_t a = 0; a < dh; ++a) {
        T acc{0};
        for (std::size_t b = 0; b < dh; ++b) acc += wh[a * dh + b] * mixed[b];
        out.at(r, h * dh + a) = acc;
      }
    }
  }
  return out;
}

/// Same output as hive_aggregate, reading pre-transformed cached rows.
template <Real T>
Tensor<T> hive_aggregate_cached(const RetrievalResult<T>& res,
                                const ValueCache<T>& cache) {
  const std::size_t n = cache.table.dim(1), dh = cache.table.dim(2);
  detail::require_shape(res.heads == cache.table.dim(0),
                        "hive_aggregate_cached: head count mismatch");
  Tensor<T> out({res.tokens, res.heads * dh});
  for (std::size_t r = 0; r < res.tokens; ++r) {
    for (std::size_t h = 0; h < res.heads; ++h) {
      T* o = out.data().data() + r * res.heads * dh + h * dh;
      for (std::size_t j = 0; j < res.k; ++j) {
        const std::size_t idx = res.indices[res.offset(r, h) + j];
        if (idx >= n) throw IndexError("hive_aggregate_cached: key index out of range");
        const T w = res.weights[res.offset(r, h) + j];
        const T* v = cache.table.data().data() + (h * n + idx) * dh;
        for (std::size_t c = 0; c < dh; ++c) o[c] += w * v[c];
      }
    }
  }
  return out;
}

}  // namespace midus

#endif  // MIDUS_MEMORY_RETRIEVAL_HPP_
