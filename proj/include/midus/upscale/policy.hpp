// Copyright 2026 The MIDUS Authors.
// SPDX-License-Identifier: Apache-2.0

#ifndef MIDUS_UPSCALE_POLICY_HPP_
#define MIDUS_UPSCALE_POLICY_HPP_

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "midus/numerics/error.hpp"

namespace midus {

enum class PolicyName { top_heavy, distributed, bottom_heavy, llama_pro };

inline std::string_view to_string(PolicyName p) {
  switch (p) {
    case PolicyName::top_heavy: return "top_heavy";
    case PolicyName::distributed: return "distributed";
    case PolicyName::bottom_heavy: return "bottom_heavy";
    case PolicyName::llama_pro: return "llama_pro";
  }
  return "?";
}

inline PolicyName parse_policy(std::string_view name) {
  if (name == "top_heavy") return PolicyName::top_heavy;
  if (name == "distributed") return PolicyName::distributed;
  if (name == "bottom_heavy") return PolicyName::bottom_heavy;
  if (name == "llama_pro") return PolicyName::llama_pro;
  throw ConfigError("unknown placement policy '" + std::string(name) +
                    "' (expected top_heavy, distributed, bottom_heavy or llama_pro)");
}

/// Where K new blocks go in a stack of L base blocks.
struct PlacementPolicy {
  PolicyName name = PolicyName::distributed;
  std::size_t base_layers = 8;  // L
  std::size_t inserted = 4;     // K
};

/// Positions of the inserted blocks in the expanded stack of L+K blocks.
///
/// With g = L/K base blocks per inserted block:
///   distributed   one block after every g-th base block from base 0:
///                 t*(g+1) + 1, g = ceil(L/K) (floor when ceil overruns)
///   llama_pro     one block closing each group of g = floor(L/K) bases:
///                 t*(g+1) + g
///   top_heavy     alternating through the top of the stack: (L-K) + 2t
///   bottom_heavy  alternating from the bottom: 2t
/// At (L, K) = (16, 8) and (32, 16) these are the published index sets.
inline std::vector<std::size_t> policy_indices(const PlacementPolicy& policy) {
  const std::size_t L = policy.base_layers, K = policy.inserted;
  if (K > L) {
    throw ConfigError("placement: inserted count " + std::to_string(K) +
                      " exceeds base depth " + std::to_string(L));
  }
  std::vector<std::size_t> out;
  if (K == 0) return out;
  out.reserve(K);
  switch (policy.name) {
    case PolicyName::distributed: {
      std::size_t g = (L + K - 1) / K;
      if ((K - 1) * (g + 1) + 1 >= L + K) g = L / K;
      for (std::size_t t = 0; t < K; ++t) out.push_back(t * (g + 1) + 1);
      break;
    }
    case PolicyName::llama_pro: {
      const std::size_t g = L / K;
      for (std::size_t t = 0; t < K; ++t) out.push_back(t * (g + 1) + g);
      break;
    }
    case PolicyName::top_heavy:
      for (std::size_t t = 0; t < K; ++t) out.push_back(L - K + 2 * t);
      break;
    case PolicyName::bottom_heavy:
      for (std::size_t t = 0; t < K; ++t) out.push_back(2 * t);
      break;
  }
  return out;
}

}  // namespace midus

#endif  // MIDUS_UPSCALE_POLICY_HPP_
