// Copyright 2026 The MIDUS Authors.
// SPDX-License-Identifier: Apache-2.0

#ifndef MIDUS_IO_BENCH_HPP_
#define MIDUS_IO_BENCH_HPP_

#include <chrono>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "midus/core/model.hpp"
#include "midus/memory/accounting.hpp"
#include "midus/memory/retrieval.hpp"

namespace midus {

/// Analytic multiply-accumulate counts over `s` tokens.
///
/// Attention: s*d^2 per projection (three, plus W_o when projecting) and
/// d*s(s+1) for causal scores and the weighted value sum. FFN: three d x d_ff
/// matrices. Memory layers: the query projection (linear/pkm), key scoring
/// (lookup_cost per head) and value aggregation, k*d per head for full-width
/// values and k*d_h + d_h^2 per head for HIVE.
inline std::uint64_t attention_macs(std::uint64_t d, std::uint64_t s, bool project_output) {
  return (project_output ? 4 : 3) * s * d * d + d * s * (s + 1);
}

inline std::uint64_t ffn_macs(const ModelDims& dims, std::uint64_t s) {
  return 3 * s * dims.d_model * dims.d_ff;
}

inline std::uint64_t transformer_block_macs(const ModelDims& dims, std::uint64_t s) {
  return attention_macs(dims.d_model, s, true) + ffn_macs(dims, s);
}

/// The memory layer alone, i.e. the part that stands where the FFN was.
inline std::uint64_t memory_layer_macs(const MemoryLayerKind& layer, const MemoryConfig& cfg,
                                       std::uint64_t s) {
  const std::uint64_t d = cfg.model_dim, H = cfg.heads, dh = cfg.head_dim(), k = cfg.top_k;
  const bool hml = layer.kind == MemoryKind::hml;
  std::uint64_t macs = hml ? 0 : s * d * d;
  const auto scheme = layer.kind == MemoryKind::linear ? LookupScheme::flat : LookupScheme::product;
  macs += s * H * lookup_cost(cfg, scheme);
  macs += hml ? s * H * (k * dh + dh * dh) : s * H * k * d;
  return macs;
}

inline std::uint64_t memory_block_macs(const MemoryLayerKind& layer, const MemoryConfig& cfg,
                                       std::uint64_t s) {
  const bool project = layer.kind != MemoryKind::hml || layer.toggles.output_projection;
  return attention_macs(cfg.model_dim, s, project) + memory_layer_macs(layer, cfg, s);
}

struct TopkBenchRow {
  std::size_t n = 0, k = 0, tokens = 0;
  double two_stage_ns = 0.0, fused_ns = 0.0;  // wall clock, mean per call
  bool equal = true;
};

/// Times both product-key selection paths on random scores for each token
/// count and checks that they select identical index sets.
inline std::vector<TopkBenchRow> bench_topk(std::size_t n, std::size_t k,
                                            const std::vector<std::size_t>& token_counts,
                                            std::size_t repeats, std::uint64_t seed) {
  using Clock = std::chrono::steady_clock;
  std::vector<TopkBenchRow> rows;
  Rng rng(seed);
  for (std::size_t tokens : token_counts) {
    TopkBenchRow row{n, k, tokens};
    double two = 0.0, fused = 0.0;
    for (std::size_t r = 0; r < repeats; ++r) {
      const auto rs = random_normal<float>({tokens, n}, rng);
      const auto cs = random_normal<float>({tokens, n}, rng);
      const auto t0 = Clock::now();
      const auto a = two_stage_topk(rs, cs, k);
      const auto t1 = Clock::now();
      const auto b = fused_cartesian_topk(rs, cs, k);
      const auto t2 = Clock::now();
      two += std::chrono::duration<double, std::nano>(t1 - t0).count();
      fused += std::chrono::duration<double, std::nano>(t2 - t1).count();
      row.equal = row.equal && a.indices == b.indices;
    }
    row.two_stage_ns = two / static_cast<double>(repeats);
    row.fused_ns = fused / static_cast<double>(repeats);
    rows.push_back(row);
  }
  return rows;
}

inline void write_topk_csv(std::ostream& out, const std::vector<TopkBenchRow>& rows) {
  out << "n,k,tokens,two_stage_ns,fused_ns,equal\n";
  for (const auto& r : rows) {
    out << r.n << ',' << r.k << ',' << r.tokens << ',' << static_cast<std::uint64_t>(r.two_stage_ns)
        << ',' << static_cast<std::uint64_t>(r.fused_ns) << ',' << (r.equal ? "true" : "false")
        << '\n';
  }
}

struct PrefillBenchRow {
  std::size_t length = 0;
  std::string block_kind;
  double forward_ns = 0.0;  // wall clock, mean per call
  std::uint64_t macs = 0;
};

/// Forward time and analytic MACs per prompt length for four block kinds:
/// the full transformer block, the full memory block (named by its kind),
/// the FFN sublayer ("ffn") and the memory layer that replaces it
/// ("<kind>_layer"). Full blocks include causal attention and so grow
/// quadratically in length; the sublayers grow linearly.
template <Real T>
std::vector<PrefillBenchRow> bench_prefill(const TransformerBlockParams<T>& tb,
                                           const MemoryBlockParams<T>& mb, const ModelDims& dims,
                                           const std::vector<std::size_t>& lengths,
                                           std::size_t repeats, std::uint64_t seed,
                                           const RetrievalOptions& retrieval = {}) {
  using Clock = std::chrono::steady_clock;
  const MemoryForwardOptions<T> mopts{Mode::eval, retrieval, nullptr};
  const std::string kind(to_string(mb.layer.kind));
  auto time = [repeats](auto&& fn) {
    double total = 0.0;
    for (std::size_t r = 0; r < repeats; ++r) {
      const auto t0 = Clock::now();
      [[maybe_unused]] const auto out = fn();
      total += std::chrono::duration<double, std::nano>(Clock::now() - t0).count();
    }
    return total / static_cast<double>(repeats);
  };
  std::vector<PrefillBenchRow> rows;
  Rng rng(seed);
  for (std::size_t s : lengths) {
    const auto x = random_normal<T>({s, dims.d_model}, rng);
    rows.push_back({s, "transformer", time([&] { return transformer_block_forward(x, tb); }),
                    transformer_block_macs(dims, s)});
    rows.push_back({s, kind, time([&] { return memory_block_forward(x, mb, mopts); }),
                    memory_block_macs(mb.layer, mb.cfg, s)});
    rows.push_back({s, "ffn", time([&] { return feed_forward(x, tb.ffn); }), ffn_macs(dims, s)});
    rows.push_back({s, kind + "_layer", time([&] { return memory_layer_forward(x, mb, mopts); }),
                    memory_layer_macs(mb.layer, mb.cfg, s)});
  }
  return rows;
}

inline void write_prefill_csv(std::ostream& out, const std::vector<PrefillBenchRow>& rows) {
  out << "length,block_kind,forward_ns,macs\n";
  for (const auto& r : rows) {
    out << r.length << ',' << r.block_kind << ',' << static_cast<std::uint64_t>(r.forward_ns)
        << ',' << r.macs << '\n';
  }
}

}  // namespace midus

#endif  // MIDUS_IO_BENCH_HPP_
