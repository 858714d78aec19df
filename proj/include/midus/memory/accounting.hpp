// Copyright 2026 The MIDUS Authors.
// SPDX-License-Identifier: Apache-2.0

#ifndef MIDUS_MEMORY_ACCOUNTING_HPP_
#define MIDUS_MEMORY_ACCOUNTING_HPP_

#include <cstdint>
#include <string_view>

#include "midus/memory/config.hpp"

namespace midus {

enum class ParamScheme { naive_headwise, hive, flat_keys, product_keys };

inline ParamScheme parse_param_scheme(std::string_view name) {
  if (name == "naive_headwise") return ParamScheme::naive_headwise;
  if (name == "hive") return ParamScheme::hive;
  if (name == "flat_keys") return ParamScheme::flat_keys;
  if (name == "product_keys") return ParamScheme::product_keys;
  throw ConfigError("unknown parameter scheme '" + std::string(name) + "'");
}

/// Exact parameter counts for the memory value/key layouts.
///   naive_headwise  H * N * d_h          separate value table per head
///   hive            N * d_h + H * d_h^2  shared base table + head transforms
///   flat_keys       N * d_q              one full-width key per slot
///   product_keys    n * d_q              2n sub-keys of width d_p per head
/// with d_q = d (queries span the model width, d_p = d_q / 2H).
inline std::uint64_t param_count(const MemoryConfig& cfg, ParamScheme scheme) {
  const std::uint64_t h = cfg.heads, n = cfg.sub_keys, big_n = cfg.num_keys(),
                      dh = cfg.head_dim(), dq = cfg.model_dim;
  switch (scheme) {
    case ParamScheme::naive_headwise: return h * big_n * dh;
    case ParamScheme::hive: return big_n * dh + h * dh * dh;
    case ParamScheme::flat_keys: return big_n * dq;
    case ParamScheme::product_keys: return n * dq;
  }
  throw ConfigError("unknown parameter scheme");
}

/// Addressable memory slots across `blocks` memory blocks: H * N per block.
inline std::uint64_t memory_slots(const MemoryConfig& cfg, std::uint64_t blocks) {
  return static_cast<std::uint64_t>(cfg.heads) * cfg.num_keys() * blocks;
}

enum class LookupScheme { flat, product };

/// Key-scoring multiply-accumulates per token per head.
///   flat:    N dot products of width 2*d_p
///   product: 2n dot products of width d_p
inline std::uint64_t lookup_cost(const MemoryConfig& cfg, LookupScheme scheme) {
  const std::uint64_t dp = cfg.subquery_dim();
  return scheme == LookupScheme::flat
             ? static_cast<std::uint64_t>(cfg.num_keys()) * 2 * dp
             : 2 * static_cast<std::uint64_t>(cfg.sub_keys) * dp;
}

}  // namespace midus

#endif  // MIDUS_MEMORY_ACCOUNTING_HPP_
