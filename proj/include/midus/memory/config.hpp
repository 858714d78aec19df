// Copyright 2026 The MIDUS Authors.
// SPDX-License-Identifier: Apache-2.0

#ifndef MIDUS_MEMORY_CONFIG_HPP_
#define MIDUS_MEMORY_CONFIG_HPP_

#include <cstddef>
#include <string>

#include "midus/numerics/error.hpp"

namespace midus {

/// Retrieval hyperparameters shared by the product-key memory variants.
///
/// Only the free parameters are stored; the remaining symbols are derived:
///   num_keys     N   = n * n composite keys per head
///   head_dim     d_h = d / H
///   subquery_dim d_p = d_h / 2   (a head embedding split into row/col halves)
struct MemoryConfig {
  std::size_t heads = 4;       // H
  std::size_t sub_keys = 16;   // n, per axis per head
  std::size_t top_k = 4;       // k
  std::size_t model_dim = 64;  // d

  std::size_t num_keys() const noexcept { return sub_keys * sub_keys; }
  std::size_t head_dim() const noexcept { return heads ? model_dim / heads : 0; }
  std::size_t subquery_dim() const noexcept { return head_dim() / 2; }

  /// Throws ConfigError naming the first violated invariant.
  void validate() const {
    if (heads == 0) throw ConfigError("memory: heads must be >= 1");
    if (sub_keys == 0) throw ConfigError("memory: sub_keys must be >= 1");
    if (model_dim % heads != 0) {
      throw ConfigError("memory: model_dim " + std::to_string(model_dim) +
                        " is not divisible by heads " + std::to_string(heads));
    }
    if (head_dim() % 2 != 0 || head_dim() == 0) {
      throw ConfigError("memory: head_dim " + std::to_string(head_dim()) +
                        " must be even so queries split into row/col halves");
    }
    if (top_k < 1 || top_k > sub_keys) {
      throw ConfigError("memory: top_k " + std::to_string(top_k) +
                        " must lie in [1, sub_keys=" + std::to_string(sub_keys) +
                        "]");
    }
  }

  friend bool operator==(const MemoryConfig&, const MemoryConfig&) = default;
};

}  // namespace midus

#endif  // MIDUS_MEMORY_CONFIG_HPP_
