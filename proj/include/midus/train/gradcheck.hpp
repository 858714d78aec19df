// Copyright 2026 The MIDUS Authors.
// SPDX-License-Identifier: Apache-2.0

#ifndef MIDUS_TRAIN_GRADCHECK_HPP_
#define MIDUS_TRAIN_GRADCHECK_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <iomanip>
#include <map>
#include <numeric>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "midus/core/parameters.hpp"
#include "midus/train/corpus.hpp"
#include "midus/train/model_backward.hpp"

namespace midus {

struct GradcheckOptions {
  double h = 1e-5;
  double tolerance = 1e-4;
  /// Relative error is |a - n| / max(|a|, |n|, floor).
  double floor = 1e-5;
  std::size_t coords_per_tensor = 8;
  std::uint64_t seed = 0;
  Mode mode = Mode::train;
  /// Layer type whose analytic gradient is deliberately scaled by 1.1
  /// (negative control); empty for none.
  std::string corrupt;
};

struct LayerTypeResult {
  std::string layer_type;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // coordinates whose perturbation changed top-k routing
  double max_rel_err = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  bool pass = true;
};

struct GradcheckReport {
  double tolerance = 0.0;
  std::vector<LayerTypeResult> layers;  // sorted by layer type

  bool passed() const {
    return std::all_of(layers.begin(), layers.end(), [](const auto& l) { return l.pass; });
  }
  std::size_t checked() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.checked;
    return n;
  }

  /// Columns: layer_type, checked, skipped, max_rel_err, worst_param,
  /// worst_index, analytic, numeric, status.
  void write_csv(std::ostream& out) const {
    out << "layer_type,checked,skipped,max_rel_err,worst_param,worst_index,analytic,numeric,"
           "status\n";
    out << std::setprecision(6);
    for (const auto& l : layers) {
      out << l.layer_type << ',' << l.checked << ',' << l.skipped << ',' << l.max_rel_err << ','
          << l.worst_param << ',' << l.worst_index << ',' << l.worst_analytic << ','
          << l.worst_numeric << ',' << (l.pass ? "pass" : "FAIL") << '\n';
    }
  }
};

/// Label used to group coordinates: "<block kind>/<role>" inside blocks,
/// the role alone for embeddings and the final norm.
inline std::string layer_type(const ParamInfo& info) {
  if (info.block == kNoBlock) {
    return info.role == ParamRole::norm ? "final_norm" : std::string(to_string(info.role));
  }
  const std::string kind =
      info.in_memory_block ? std::string(to_string(info.memory_kind)) : "transformer";
  return kind + "/" + std::string(to_string(info.role));
}

namespace detail {

template <Real T>
std::vector<std::vector<std::uint32_t>> routing_of(const ModelCache<T>& cache) {
  std::vector<std::vector<std::uint32_t>> out;
  for (const auto& b : cache.blocks) {
    if (const auto* mc = std::get_if<MemoryBlockCache<T>>(&b)) {
      out.push_back(mc->layer.retrieval.indices);
    }
  }
  return out;
}

/// Mean loss over `data`; optionally records the routing of every example.
template <Real T>
double dataset_loss(const ModelSpec<T>& spec, const std::vector<Example>& data,
                    const ForwardOptions<T>& fwd,
                    std::vector<std::vector<std::vector<std::uint32_t>>>* routing) {
  double total = 0.0;
  if (routing) routing->clear();
  for (const auto& e : data) {
    ModelCache<T> cache;
    const Tensor<T> logits = model_forward(e.inputs, spec, fwd, &cache);
    total += static_cast<double>(lm_loss(logits, std::span<const Token>(e.targets),
                                         std::span<const std::uint8_t>(e.mask)));
    if (routing) routing->push_back(routing_of(cache));
  }
  return total / static_cast<double>(data.size());
}

}  // namespace detail

/// Central-difference check of every parameter gradient of `spec` (all
/// parameters, regardless of the trainable mask) on the mean loss over `data`.
inline GradcheckReport gradcheck(const ModelSpec<double>& spec, const std::vector<Example>& data,
                                 const GradcheckOptions& opts = {}) {
  if (data.empty()) throw ConfigError("gradcheck: empty dataset");
  ForwardOptions<double> fwd;
  fwd.mode = opts.mode;
  BackwardOptions<double> bwd;
  bwd.all_parameters = true;

  GradStore<double> store(spec);
  store.accumulate = true;
  const double inv = 1.0 / static_cast<double>(data.size());
  std::vector<std::vector<std::vector<std::uint32_t>>> routing;
  for (const auto& e : data) {
    ModelCache<double> cache;
    const Tensor<double> logits = model_forward(e.inputs, spec, fwd, &cache);
    Tensor<double> dlogits;
    lm_loss(logits, std::span<const Token>(e.targets), std::span<const std::uint8_t>(e.mask),
            &dlogits);
    for (double& v : dlogits.data()) v *= inv;
    model_backward(spec, cache, dlogits, store, bwd);
    routing.push_back(detail::routing_of(cache));
  }

  const auto grads = parameter_list(std::as_const(store.grads));
  ModelSpec<double> probe = spec;
  auto params = parameter_list(probe);
  Rng rng(opts.seed);
  std::map<std::string, LayerTypeResult> by_type;
  std::vector<std::vector<std::vector<std::uint32_t>>> moved;

  for (std::size_t i = 0; i < params.size(); ++i) {
    const ParamInfo& info = params[i].first;
    Tensor<double>& p = *params[i].second;
    const Tensor<double>& g = *grads[i].second;
    const std::string type = layer_type(info);
    LayerTypeResult& res = by_type[type];
    res.layer_type = type;
    const double fault = type == opts.corrupt ? 1.1 : 1.0;

    std::vector<std::size_t> coords(p.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (coords.size() > opts.coords_per_tensor) {
      for (std::size_t j = 0; j < opts.coords_per_tensor; ++j) {
        std::swap(coords[j], coords[j + rng.below(coords.size() - j)]);
      }
      coords.resize(opts.coords_per_tensor);
    }
    for (std::size_t c : coords) {
      const double saved = p[c];
      p[c] = saved + opts.h;
      const double up = detail::dataset_loss(probe, data, fwd, &moved);
      bool flipped = moved != routing;
      p[c] = saved - opts.h;
      const double down = detail::dataset_loss(probe, data, fwd, &moved);
      flipped = flipped || moved != routing;
      p[c] = saved;
      if (flipped) {
        ++res.skipped;
        continue;
      }
      const double numeric = (up - down) / (2.0 * opts.h);
      const double analytic = g[c] * fault;
      const double err = std::abs(analytic - numeric) /
                         std::max({std::abs(analytic), std::abs(numeric), opts.floor});
      ++res.checked;
      if (err >= res.max_rel_err) {
        res.max_rel_err = err;
        res.worst_param = info.name;
        res.worst_index = c;
        res.worst_analytic = analytic;
        res.worst_numeric = numeric;
      }
    }
  }

  GradcheckReport report;
  report.tolerance = opts.tolerance;
  for (auto& [name, r] : by_type) {
    r.pass = r.max_rel_err < opts.tolerance;
    report.layers.push_back(r);
  }
  return report;
}

/// A small model covering every layer type: transformer blocks interleaved
/// with one memory block per kind, with nonzero value tables so that keys
/// and queries receive gradients.
inline ModelSpec<double> gradcheck_model(const ModelDims& dims, const MemoryConfig& cfg,
                                         std::uint64_t seed) {
  Rng rng(seed);
  ModelSpec<double> base = ModelSpec<double>::random(dims, 3, rng, 0.2);
  ModelSpec<double> out = base;
  out.blocks.clear();
  out.trainable.clear();
  out.inserted.clear();
  const MemoryKind kinds[] = {MemoryKind::hml, MemoryKind::pkm, MemoryKind::linear};
  for (std::size_t l = 0; l < 3; ++l) {
    const auto& tb = std::get<TransformerBlockParams<double>>(base.blocks[l]);
    Rng block_rng = rng.fork(l);
    auto mb = MemoryBlockParams<double>::from_attention(MemoryLayerKind::defaults(kinds[l]), cfg,
                                                        tb.attn_norm, tb.attn, block_rng);
    for (auto* t : {&mb.values, &mb.hive.base}) {
      if (!t->empty()) *t = random_normal<double>(t->shape(), block_rng, 0.5);
    }
    for (double& v : mb.attn_norm.data()) v += 0.1 * block_rng.normal();
    out.blocks.emplace_back(std::move(mb));
    out.blocks.emplace_back(tb);
    out.trainable.insert(out.trainable.end(), {true, true});
    out.inserted.insert(out.inserted.end(), {true, false});
  }
  for (double& v : out.final_norm.data()) v += 0.1 * rng.normal();
  return out;
}

/// Random token sequences with every target scored.
inline std::vector<Example> random_examples(std::size_t vocab, std::size_t length,
                                            std::size_t count, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Example> out;
  for (std::size_t i = 0; i < count; ++i) {
    std::vector<Token> seq(length + 1);
    for (Token& t : seq) t = static_cast<Token>(rng.below(vocab));
    out.push_back(shift_sequence(seq));
  }
  return out;
}

}  // namespace midus

#endif  // MIDUS_TRAIN_GRADCHECK_HPP_
