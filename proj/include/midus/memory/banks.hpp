// Copyright 2026 The MIDUS Authors.
// SPDX-License-Identifier: Apache-2.0

#ifndef MIDUS_MEMORY_BANKS_HPP_
#define MIDUS_MEMORY_BANKS_HPP_

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>

#include "midus/memory/config.hpp"
#include "midus/numerics/ops.hpp"
#include "midus/numerics/rng.hpp"
#include "midus/numerics/tensor.hpp"

namespace midus {

/// Multiply-accumulate tally for instrumented lookups.
struct MacCounter {
  std::uint64_t macs = 0;
};

/// Row/column sub-key codebooks, one independent pair per head.
/// Shapes: row_keys, col_keys = [H x n x d_p].
template <Real T>
struct ProductKeyBank {
  Tensor<T> row_keys;
  Tensor<T> col_keys;

  std::size_t heads() const { return row_keys.dim(0); }
  std::size_t sub_keys() const { return row_keys.dim(1); }
  std::size_t subquery_dim() const { return row_keys.dim(2); }

  /// Zero-mean Gaussian with std 1/sqrt(d_p) keeps initial scores O(1).
  static ProductKeyBank random(const MemoryConfig& cfg, Rng& rng) {
    const Shape shape{cfg.heads, cfg.sub_keys, cfg.subquery_dim()};
    const double std = 1.0 / std::sqrt(static_cast<double>(cfg.subquery_dim()));
    ProductKeyBank bank;
    bank.row_keys = random_normal<T>(shape, rng, std);
    bank.col_keys = random_normal<T>(shape, rng, std);
    return bank;
  }

  friend bool operator==(const ProductKeyBank&, const ProductKeyBank&) = default;
};

/// HIVE value store: a shared base table of head width plus one small
/// transform per head. Shapes: base = [N x d_h], transforms = [H x d_h x d_h].
template <Real T>
struct ValueBank {
  Tensor<T> base;
  Tensor<T> transforms;

  std::size_t num_keys() const { return base.dim(0); }
  std::size_t head_dim() const { return base.dim(1); }
  std::size_t heads() const { return transforms.dim(0); }

  std::size_t parameter_count() const { return base.size() + transforms.size(); }

  /// Zero base table (so the layer starts as an exact no-op) and Gaussian
  /// transforms with std 1/sqrt(d_h).
  static ValueBank identity_init(const MemoryConfig& cfg, Rng& rng) {
    const std::size_t dh = cfg.head_dim();
    ValueBank bank;
    bank.base = Tensor<T>({cfg.num_keys(), dh});
    bank.transforms = random_normal<T>({cfg.heads, dh, dh}, rng,
                                       1.0 / std::sqrt(static_cast<double>(dh)));
    return bank;
  }

  friend bool operator==(const ValueBank&, const ValueBank&) = default;
};

/// Inference-only materialization of every head's logical value table:
/// table[h] = base * transforms[h]^T, shape [H x N x d_h].
template <Real T>
struct ValueCache {
  Tensor<T> table;
};

template <Real T>
ValueCache<T> build_value_cache(const ValueBank<T>& bank) {
  const std::size_t heads = bank.heads(), n = bank.num_keys(),
                    dh = bank.head_dim();
  ValueCache<T> cache{Tensor<T>({heads, n, dh})};
  for (std::size_t h = 0; h < heads; ++h) {
    cache.table.set_slab(h, matmul_nt(bank.base, bank.transforms.slab(h)));
  }
  return cache;
}

/// 0-based composite key index pi(i, j) = i * n + j.
inline std::size_t flat_index(std::size_t row, std::size_t col, std::size_t n) {
  if (row >= n || col >= n) {
    throw IndexError("flat_index: (" + std::to_string(row) + ", " +
                     std::to_string(col) + ") outside a " + std::to_string(n) +
                     "x" + std::to_string(n) + " grid");
  }
  return row * n + col;
}

struct GridIndex {
  std::size_t row;
  std::size_t col;
  friend bool operator==(const GridIndex&, const GridIndex&) = default;
};

inline GridIndex split_index(std::size_t flat, std::size_t n) {
  if (flat >= n * n) {
    throw IndexError("split_index: " + std::to_string(flat) + " >= " +
                     std::to_string(n * n));
  }
  return {flat / n, flat % n};
}

/// Row and column sub-key scores for one head.
template <Real T>
struct SubkeyScores {
  Tensor<T> row;  // [s x n]
  Tensor<T> col;  // [s x n]
};

/// Scores a head's queries [s x 2 d_p] against its row/col sub-key banks.
template <Real T>
SubkeyScores<T> score_subkeys(const Tensor<T>& queries,
                              const ProductKeyBank<T>& bank, std::size_t head,
                              MacCounter* counter = nullptr) {
  const std::size_t dp = bank.subquery_dim();
  detail::require_shape(queries.rank() == 2 && queries.cols() == 2 * dp,
                        "score_subkeys: query width " +
                            shape_string(queries.shape()) + " != 2*d_p=" +
                            std::to_string(2 * dp));
  detail::require_shape(head < bank.heads(), "score_subkeys: head out of range");
  const std::size_t s = queries.rows(), n = bank.sub_keys();
  SubkeyScores<T> out{Tensor<T>({s, n}), Tensor<T>({s, n})};
  const T* rk = bank.row_keys.data().data() + head * n * dp;
  const T* ck = bank.col_keys.data().data() + head * n * dp;
  for (std::size_t r = 0; r < s; ++r) {
    const T* q = queries.data().data() + r * 2 * dp;
    for (std::size_t i = 0; i < n; ++i) {
      T a{0}, b{0};
      for (std::size_t p = 0; p < dp; ++p) {
        a += q[p] * rk[i * dp + p];
        b += q[dp + p] * ck[i * dp + p];
      }
      out.row.at(r, i) = a;
      out.col.at(r, i) = b;
    }
  }
  if (counter) counter->macs += 2 * s * n * dp;
  return out;
}

/// Flat scoring of queries [s x w] against one head's full key table [N x w].
template <Real T>
Tensor<T> score_flat_keys(const Tensor<T>& queries, const Tensor<T>& keys,
                          MacCounter* counter = nullptr) {
  Tensor<T> scores = matmul_nt(queries, keys);
  if (counter) counter->macs += queries.rows() * keys.rows() * keys.cols();
  return scores;
}

}  // namespace midus

#endif  // MIDUS_MEMORY_BANKS_HPP_
