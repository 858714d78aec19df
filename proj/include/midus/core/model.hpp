// Copyright 2026 The MIDUS Authors.
// SPDX-License-Identifier: Apache-2.0

#ifndef MIDUS_CORE_MODEL_HPP_
#define MIDUS_CORE_MODEL_HPP_

#include <cmath>
#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "midus/core/loss.hpp"
#include "midus/core/transformer_block.hpp"
#include "midus/layers/memory_block.hpp"

namespace midus {

/// Backbone hyperparameters. Desk-scale defaults: byte vocabulary, d=64,
/// 4 heads, d_ff=256.
struct ModelDims {
  std::size_t vocab = 256;
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t d_ff = 256;

  void validate() const {
    if (vocab == 0) throw ConfigError("model: vocab must be >= 1");
    if (heads == 0 || d_model % heads != 0) {
      throw ConfigError("model: d_model " + std::to_string(d_model) +
                        " is not divisible by heads " + std::to_string(heads));
    }
    if ((d_model / heads) % 2 != 0) {
      throw ConfigError("model: head width must be even for rotary embeddings");
    }
    if (d_ff == 0) throw ConfigError("model: d_ff must be >= 1");
  }

  friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

template <Real T>
using Block = std::variant<TransformerBlockParams<T>, MemoryBlockParams<T>>;

template <Real T>
bool is_memory(const Block<T>& b) {
  return std::holds_alternative<MemoryBlockParams<T>>(b);
}

/// Ordered layer stack with per-block trainability. Blocks run in vector
/// order, so blocks[0] is applied first (T_0 in composition notation).
template <Real T>
struct ModelSpec {
  ModelDims dims;
  Tensor<T> embedding;    // [vocab x d]
  std::vector<Block<T>> blocks;
  std::vector<bool> trainable;  // per block
  std::vector<bool> inserted;   // per block; set by up-scaling
  bool train_embeddings = false;  // embedding, final norm, unembedding
  Tensor<T> final_norm;   // [d]
  Tensor<T> unembedding;  // [d x vocab]

  /// Block weights and the embedding use N(0, init_std) and N(0, 1); the
  /// unembedding uses N(0, 1/d).
  static ModelSpec random(const ModelDims& dims, std::size_t layers, Rng& rng,
                          double init_std = 0.02) {
    dims.validate();
    ModelSpec m;
    m.dims = dims;
    m.embedding = random_normal<T>({dims.vocab, dims.d_model}, rng, 1.0);
    for (std::size_t l = 0; l < layers; ++l) {
      m.blocks.emplace_back(TransformerBlockParams<T>::random(
          dims.d_model, dims.heads, dims.d_ff, rng, init_std));
    }
    m.trainable.assign(layers, true);
    m.inserted.assign(layers, false);
    m.train_embeddings = true;
    m.final_norm = Tensor<T>({dims.d_model}, T{1});
    m.unembedding = random_normal<T>({dims.d_model, dims.vocab}, rng,
                                     1.0 / std::sqrt(static_cast<double>(dims.d_model)));
    return m;
  }

  std::size_t transformer_count() const {
    std::size_t n = 0;
    for (const auto& b : blocks) n += !is_memory(b);
    return n;
  }

  void validate() const {
    dims.validate();
    if (trainable.size() != blocks.size()) {
      throw ConfigError("model: trainable mask length " +
                        std::to_string(trainable.size()) + " != block count " +
                        std::to_string(blocks.size()));
    }
    detail::require_shape(embedding.shape() == Shape{dims.vocab, dims.d_model},
                          "model: embedding shape");
    detail::require_shape(unembedding.shape() == Shape{dims.d_model, dims.vocab},
                          "model: unembedding shape");
    if (!inserted.empty() && inserted.size() != blocks.size()) {
      throw ConfigError("model: inserted mask length != block count");
    }
  }

  bool is_inserted(std::size_t block) const {
    return block < inserted.size() && inserted[block];
  }

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

template <Real T>
struct ForwardOptions {
  Mode mode = Mode::eval;
  RetrievalOptions retrieval;
  /// Optional per-block HML value caches (inference only), keyed by block index.
  const std::map<std::size_t, ValueCache<T>>* value_caches = nullptr;
  /// Optional per-block per-head attention output scales.
  const std::map<std::size_t, std::vector<double>>* head_scales = nullptr;
};

template <Real T>
using BlockCache = std::variant<TransformerBlockCache<T>, MemoryBlockCache<T>>;

template <Real T>
struct ModelCache {
  std::vector<Token> tokens;
  std::vector<BlockCache<T>> blocks;
  Tensor<T> final_input;  // residual stream entering the final norm
  Tensor<T> final_normed;
};

/// Builds a forward cache of the right alternative for every block.
template <Real T>
ModelCache<T> make_cache(const ModelSpec<T>& spec) {
  ModelCache<T> c;
  for (const auto& b : spec.blocks) {
    if (is_memory(b)) c.blocks.emplace_back(MemoryBlockCache<T>{});
    else c.blocks.emplace_back(TransformerBlockCache<T>{});
  }
  return c;
}

template <Real T>
Tensor<T> embed_tokens(const ModelSpec<T>& spec, std::span<const Token> tokens) {
  const std::size_t d = spec.dims.d_model;
  Tensor<T> x({tokens.size(), d});
  for (std::size_t r = 0; r < tokens.size(); ++r) {
    if (tokens[r] >= spec.dims.vocab) {
      throw IndexError("token " + std::to_string(tokens[r]) + " outside vocab " +
                       std::to_string(spec.dims.vocab));
    }
    const auto e = spec.embedding.row(tokens[r]);
    std::copy(e.begin(), e.end(), x.row(r).begin());
  }
  return x;
}

/// Residual stream after running blocks [0, end).
template <Real T>
Tensor<T> run_blocks(const ModelSpec<T>& spec, Tensor<T> x, std::size_t end,
                     const ForwardOptions<T>& opts, ModelCache<T>* cache) {
  for (std::size_t l = 0; l < end; ++l) {
    std::span<const double> scale;
    if (opts.head_scales) {
      if (auto it = opts.head_scales->find(l); it != opts.head_scales->end()) {
        scale = it->second;
      }
    }
    if (const auto* tb = std::get_if<TransformerBlockParams<T>>(&spec.blocks[l])) {
      auto* c = cache ? &std::get<TransformerBlockCache<T>>(cache->blocks[l]) : nullptr;
      x = transformer_block_forward(x, *tb, c, scale);
    } else {
      const auto& mb = std::get<MemoryBlockParams<T>>(spec.blocks[l]);
      MemoryForwardOptions<T> mopts{opts.mode, opts.retrieval, nullptr};
      if (opts.value_caches) {
        if (auto it = opts.value_caches->find(l); it != opts.value_caches->end()) {
          mopts.value_cache = &it->second;
        }
      }
      auto* c = cache ? &std::get<MemoryBlockCache<T>>(cache->blocks[l]) : nullptr;
      x = memory_block_forward(x, mb, mopts, c, scale);
    }
  }
  return x;
}

/// embed -> blocks in order -> final norm -> unembed. Returns [s x vocab].
template <Real T>
Tensor<T> model_forward(std::span<const Token> tokens, const ModelSpec<T>& spec,
                        const ForwardOptions<T>& opts = {},
                        ModelCache<T>* cache = nullptr) {
  if (cache) {
    *cache = make_cache(spec);
    cache->tokens.assign(tokens.begin(), tokens.end());
  }
  Tensor<T> x = run_blocks(spec, embed_tokens(spec, tokens), spec.blocks.size(),
                           opts, cache);
  Tensor<T> normed = rms_norm(x, spec.final_norm, kNormEps<T>);
  Tensor<T> logits = matmul(normed, spec.unembedding);
  ensure_finite(logits, "model_forward");
  if (cache) {
    cache->final_input = std::move(x);
    cache->final_normed = std::move(normed);
  }
  return logits;
}

template <Real T>
Tensor<T> model_forward(const std::vector<Token>& tokens, const ModelSpec<T>& spec,
                        const ForwardOptions<T>& opts = {},
                        ModelCache<T>* cache = nullptr) {
  return model_forward(std::span<const Token>(tokens), spec, opts, cache);
}

}  // namespace midus

#endif  // MIDUS_CORE_MODEL_HPP_
