// Copyright 2026 The MIDUS Authors.
// SPDX-License-Identifier: Apache-2.0

#ifndef MIDUS_CORE_PARAMETERS_HPP_
#define MIDUS_CORE_PARAMETERS_HPP_

#include <cstddef>
#include <limits>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>
#include <vector>

#include "midus/core/model.hpp"

namespace midus {

enum class ParamRole {
  embedding,
  unembedding,
  norm,
  attention,
  ffn,
  query_proj,
  flat_keys,
  product_keys,
  values,
  value_base,
  value_transform,
};

inline std::string_view to_string(ParamRole r) {
  switch (r) {
    case ParamRole::embedding: return "embedding";
    case ParamRole::unembedding: return "unembedding";
    case ParamRole::norm: return "norm";
    case ParamRole::attention: return "attention";
    case ParamRole::ffn: return "ffn";
    case ParamRole::query_proj: return "query_proj";
    case ParamRole::flat_keys: return "flat_keys";
    case ParamRole::product_keys: return "product_keys";
    case ParamRole::values: return "values";
    case ParamRole::value_base: return "value_base";
    case ParamRole::value_transform: return "value_transform";
  }
  return "?";
}

/// Memory keys and value tables (not the HIVE head transforms).
inline bool is_key_or_value(ParamRole r) {
  return r == ParamRole::flat_keys || r == ParamRole::product_keys ||
         r == ParamRole::values || r == ParamRole::value_base;
}

inline constexpr std::size_t kNoBlock = std::numeric_limits<std::size_t>::max();

struct ParamInfo {
  std::string name;
  std::size_t block = kNoBlock;  // kNoBlock for embeddings / final norm
  ParamRole role;
  bool in_memory_block = false;
  bool inserted = false;  // block was added by up-scaling
  MemoryKind memory_kind = MemoryKind::hml;
};

namespace detail {

template <typename Attn, typename F>
void visit_attention(Attn& a, const std::string& prefix, ParamInfo base, F& f) {
  base.role = ParamRole::attention;
  base.name = prefix + "attn.wq"; f(base, a.wq);
  base.name = prefix + "attn.wk"; f(base, a.wk);
  base.name = prefix + "attn.wv"; f(base, a.wv);
  if (!a.wo.empty()) { base.name = prefix + "attn.wo"; f(base, a.wo); }
}

}  // namespace detail

/// Calls f(info, tensor) for every learnable tensor in a fixed order.
/// `Spec` is ModelSpec<T> or const ModelSpec<T>.
template <typename Spec, typename F>
void visit_parameters(Spec& m, F&& f) {
  using T = typename std::remove_cvref_t<decltype(m.embedding)>::value_type;
  f(ParamInfo{"embedding", kNoBlock, ParamRole::embedding}, m.embedding);
  for (std::size_t l = 0; l < m.blocks.size(); ++l) {
    const std::string prefix = "blocks." + std::to_string(l) + ".";
    ParamInfo info{"", l, ParamRole::norm};
    info.inserted = m.is_inserted(l);
    if (auto* tb = std::get_if<TransformerBlockParams<T>>(&m.blocks[l])) {
      info.name = prefix + "attn_norm"; f(info, tb->attn_norm);
      detail::visit_attention(tb->attn, prefix, info, f);
      info.role = ParamRole::norm;
      info.name = prefix + "ffn_norm"; f(info, tb->ffn_norm);
      info.role = ParamRole::ffn;
      info.name = prefix + "ffn.w_gate"; f(info, tb->ffn.w_gate);
      info.name = prefix + "ffn.w_up"; f(info, tb->ffn.w_up);
      info.name = prefix + "ffn.w_down"; f(info, tb->ffn.w_down);
    } else {
      auto& mb = std::get<MemoryBlockParams<T>>(m.blocks[l]);
      info.in_memory_block = true;
      info.memory_kind = mb.layer.kind;
      info.name = prefix + "attn_norm"; f(info, mb.attn_norm);
      detail::visit_attention(mb.attn, prefix, info, f);
      const auto emit = [&](ParamRole role, const char* name, auto& t) {
        if (t.empty()) return;
        info.role = role;
        info.name = prefix + name;
        f(info, t);
      };
      emit(ParamRole::query_proj, "memory.query_proj", mb.query_proj);
      emit(ParamRole::flat_keys, "memory.flat_keys", mb.flat_keys);
      emit(ParamRole::product_keys, "memory.row_keys", mb.product_keys.row_keys);
      emit(ParamRole::product_keys, "memory.col_keys", mb.product_keys.col_keys);
      emit(ParamRole::values, "memory.values", mb.values);
      emit(ParamRole::value_base, "memory.value_base", mb.hive.base);
      emit(ParamRole::value_transform, "memory.value_transforms", mb.hive.transforms);
    }
  }
  f(ParamInfo{"final_norm", kNoBlock, ParamRole::norm}, m.final_norm);
  f(ParamInfo{"unembedding", kNoBlock, ParamRole::unembedding}, m.unembedding);
}

/// Non-learned state saved with a model (batch-norm running statistics).
template <typename Spec, typename F>
void visit_buffers(Spec& m, F&& f) {
  using T = typename std::remove_cvref_t<decltype(m.embedding)>::value_type;
  for (std::size_t l = 0; l < m.blocks.size(); ++l) {
    if (auto* mb = std::get_if<MemoryBlockParams<T>>(&m.blocks[l])) {
      const std::string prefix = "blocks." + std::to_string(l) + ".";
      f(prefix + "memory.bn_running_mean", mb->query_stats.running_mean);
      f(prefix + "memory.bn_running_var", mb->query_stats.running_var);
    }
  }
}

/// Whether a parameter receives updates under the model's trainable mask.
template <Real T>
bool is_trainable(const ModelSpec<T>& m, const ParamInfo& info) {
  return info.block == kNoBlock ? m.train_embeddings : m.trainable.at(info.block);
}

template <Real T>
std::size_t count_parameters(const ModelSpec<T>& m, bool trainable_only) {
  std::size_t n = 0;
  visit_parameters(m, [&](const ParamInfo& info, const Tensor<T>& t) {
    if (!trainable_only || is_trainable(m, info)) n += t.size();
  });
  return n;
}

/// Flat list of (info, tensor*) in visit order.
template <Real T>
std::vector<std::pair<ParamInfo, Tensor<T>*>> parameter_list(ModelSpec<T>& m) {
  std::vector<std::pair<ParamInfo, Tensor<T>*>> out;
  visit_parameters(m, [&](const ParamInfo& info, Tensor<T>& t) {
    out.emplace_back(info, &t);
  });
  return out;
}

template <Real T>
std::vector<std::pair<ParamInfo, const Tensor<T>*>> parameter_list(
    const ModelSpec<T>& m) {
  std::vector<std::pair<ParamInfo, const Tensor<T>*>> out;
  visit_parameters(m, [&](const ParamInfo& info, const Tensor<T>& t) {
    out.emplace_back(info, &t);
  });
  return out;
}

/// A model-shaped container of zeros, used to hold gradients or moments.
template <Real T>
ModelSpec<T> zeros_like(const ModelSpec<T>& m) {
  ModelSpec<T> z = m;
  visit_parameters(z, [](const ParamInfo&, Tensor<T>& t) { t.fill(T{0}); });
  return z;
}

/// FNV-1a over the raw bytes of every parameter (or only frozen ones).
template <Real T>
std::uint64_t parameter_checksum(const ModelSpec<T>& m, bool frozen_only = false) {
  std::uint64_t h = 1469598103934665603ull;
  visit_parameters(m, [&](const ParamInfo& info, const Tensor<T>& t) {
    if (frozen_only && is_trainable(m, info)) return;
    const auto* bytes = reinterpret_cast<const unsigned char*>(t.data().data());
    for (std::size_t i = 0; i < t.size() * sizeof(T); ++i) {
      h ^= bytes[i];
      h *= 1099511628211ull;
    }
  });
  return h;
}

}  // namespace midus

#endif  // MIDUS_CORE_PARAMETERS_HPP_
