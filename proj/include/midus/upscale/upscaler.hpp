// Copyright 2026 The MIDUS Authors.
// SPDX-License-Identifier: Apache-2.0

#ifndef MIDUS_UPSCALE_UPSCALER_HPP_
#define MIDUS_UPSCALE_UPSCALER_HPP_

#include <algorithm>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "midus/core/model.hpp"
#include "midus/upscale/policy.hpp"

namespace midus {

enum class InsertKind { transformer_copy, memory_block };
enum class InitSource { preceding, subsequent, average_adjacent };

inline std::string_view to_string(InitSource s) {
  switch (s) {
    case InitSource::preceding: return "preceding";
    case InitSource::subsequent: return "subsequent";
    case InitSource::average_adjacent: return "average_adjacent";
  }
  return "?";
}

inline InitSource parse_init_source(std::string_view name) {
  if (name == "preceding") return InitSource::preceding;
  if (name == "subsequent") return InitSource::subsequent;
  if (name == "average_adjacent") return InitSource::average_adjacent;
  throw ConfigError("unknown init source '" + std::string(name) +
                    "' (expected preceding, subsequent or average_adjacent)");
}

struct UpscalePlan {
  PolicyName policy = PolicyName::distributed;
  std::size_t inserted = 4;  // K
  InsertKind insert_kind = InsertKind::memory_block;
  InitSource init_source = InitSource::subsequent;
  MemoryLayerKind memory = MemoryLayerKind::defaults(MemoryKind::hml);
  MemoryConfig memory_cfg;
  bool identity_init = true;  // zero W_o/W_down of DUS copies
  std::uint64_t seed = 0;     // memory key / transform initialization

  static UpscalePlan midus(MemoryKind kind, const MemoryConfig& cfg,
                           std::size_t k, PolicyName policy = PolicyName::distributed) {
    UpscalePlan p;
    p.policy = policy;
    p.inserted = k;
    p.insert_kind = InsertKind::memory_block;
    p.init_source = InitSource::subsequent;
    p.memory = MemoryLayerKind::defaults(kind);
    p.memory_cfg = cfg;
    return p;
  }

  /// Llama Pro convention: transformer copies from the preceding block.
  static UpscalePlan dus(std::size_t k, PolicyName policy = PolicyName::llama_pro) {
    UpscalePlan p;
    p.policy = policy;
    p.inserted = k;
    p.insert_kind = InsertKind::transformer_copy;
    p.init_source = InitSource::preceding;
    return p;
  }
};

/// Copy of a block with W_o and W_down zeroed, so it computes the identity.
template <Real T>
TransformerBlockParams<T> zero_init_dus_copy(const TransformerBlockParams<T>& block) {
  TransformerBlockParams<T> out = block;
  out.attn.wo.fill(T{0});
  out.ffn.w_down.fill(T{0});
  return out;
}

namespace detail {

template <Real T>
void average_into(Tensor<T>& dst, const Tensor<T>& other) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = (dst[i] + other[i]) / T{2};
}

template <Real T>
TransformerBlockParams<T> average_blocks(TransformerBlockParams<T> a,
                                         const TransformerBlockParams<T>& b) {
  average_into(a.attn_norm, b.attn_norm);
  average_into(a.attn.wq, b.attn.wq);
  average_into(a.attn.wk, b.attn.wk);
  average_into(a.attn.wv, b.attn.wv);
  average_into(a.attn.wo, b.attn.wo);
  average_into(a.ffn_norm, b.ffn_norm);
  average_into(a.ffn.w_gate, b.ffn.w_gate);
  average_into(a.ffn.w_up, b.ffn.w_up);
  average_into(a.ffn.w_down, b.ffn.w_down);
  return a;
}

/// Base transformer blocks only, in order.
template <Real T>
std::vector<const TransformerBlockParams<T>*> base_blocks(const ModelSpec<T>& base) {
  std::vector<const TransformerBlockParams<T>*> out;
  for (const auto& b : base.blocks) {
    const auto* tb = std::get_if<TransformerBlockParams<T>>(&b);
    if (!tb) throw ConfigError("upscale: base model already contains memory blocks");
    out.push_back(tb);
  }
  return out;
}

/// The block an inserted block at `position` is initialized from, given how
/// many base blocks precede it. Falls back to the only neighbour at the ends.
template <Real T>
TransformerBlockParams<T> init_source_block(
    const std::vector<const TransformerBlockParams<T>*>& bases,
    std::size_t bases_before, InitSource source) {
  const bool has_prev = bases_before > 0;
  const bool has_next = bases_before < bases.size();
  const auto* prev = has_prev ? bases[bases_before - 1] : nullptr;
  const auto* next = has_next ? bases[bases_before] : nullptr;
  switch (source) {
    case InitSource::preceding: return *(prev ? prev : next);
    case InitSource::subsequent: return *(next ? next : prev);
    case InitSource::average_adjacent:
      if (prev && next) return average_blocks(*prev, *next);
      return *(prev ? prev : next);
  }
  return *(next ? next : prev);
}

template <Real T>
ModelSpec<T> expand(const ModelSpec<T>& base, const UpscalePlan& plan) {
  base.validate();
  const auto bases = base_blocks(base);
  const std::size_t L = bases.size(), K = plan.inserted;
  const auto positions = policy_indices({plan.policy, L, K});
  ModelSpec<T> out;
  out.dims = base.dims;
  out.embedding = base.embedding;
  out.final_norm = base.final_norm;
  out.unembedding = base.unembedding;
  out.train_embeddings = false;
  Rng rng(plan.seed);
  std::size_t next_base = 0, next_insert = 0;
  for (std::size_t p = 0; p < L + K; ++p) {
    if (next_insert < K && positions[next_insert] == p) {
      const auto src = init_source_block(bases, next_base, plan.init_source);
      if (plan.insert_kind == InsertKind::transformer_copy) {
        out.blocks.emplace_back(plan.identity_init ? zero_init_dus_copy(src) : src);
      } else {
        Rng block_rng = rng.fork(next_insert);
        out.blocks.emplace_back(MemoryBlockParams<T>::from_attention(
            plan.memory, plan.memory_cfg, src.attn_norm, src.attn, block_rng));
      }
      out.trainable.push_back(true);
      out.inserted.push_back(true);
      ++next_insert;
    } else {
      out.blocks.emplace_back(*bases[next_base++]);
      out.trainable.push_back(false);
      out.inserted.push_back(false);
    }
  }
  return out;
}

}  // namespace detail

/// Depth up-scaling with transformer-block copies at the policy positions.
/// Only the inserted blocks are trainable.
template <Real T>
ModelSpec<T> build_dus(const ModelSpec<T>& base, const UpscalePlan& plan) {
  if (plan.insert_kind != InsertKind::transformer_copy) {
    throw ConfigError("build_dus requires insert_kind = transformer_copy");
  }
  return detail::expand(base, plan);
}

/// Memory-infused up-scaling: a memory block at each policy position, its
/// attention copied from the base block that follows it (per init_source),
/// value tables zero so the expanded model reproduces the base at init.
template <Real T>
ModelSpec<T> build_midus(const ModelSpec<T>& base, const UpscalePlan& plan) {
  if (plan.insert_kind != InsertKind::memory_block) {
    throw ConfigError("build_midus requires insert_kind = memory_block");
  }
  if (plan.memory_cfg.heads != base.dims.heads ||
      plan.memory_cfg.model_dim != base.dims.d_model) {
    throw ConfigError("build_midus: memory heads/width must match the backbone (" +
                      std::to_string(base.dims.heads) + " heads, d=" +
                      std::to_string(base.dims.d_model) + ")");
  }
  return detail::expand(base, plan);
}

template <Real T>
ModelSpec<T> upscale(const ModelSpec<T>& base, const UpscalePlan& plan) {
  return plan.insert_kind == InsertKind::memory_block ? build_midus(base, plan)
                                                      : build_dus(base, plan);
}

}  // namespace midus

#endif  // MIDUS_UPSCALE_UPSCALER_HPP_
