// Copyright 2026 The MIDUS Authors.
// SPDX-License-Identifier: Apache-2.0

#ifndef MIDUS_TRAIN_TRAINER_HPP_
#define MIDUS_TRAIN_TRAINER_HPP_

#include <cstddef>
#include <cstdint>
#include <iomanip>
#include <ostream>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "midus/core/parameters.hpp"
#include "midus/train/corpus.hpp"
#include "midus/train/model_backward.hpp"
#include "midus/train/optimizer.hpp"

namespace midus {

/// cpt: only inserted blocks train. sft: every parameter trains.
enum class TrainMode { cpt, sft };

inline TrainMode parse_train_mode(std::string_view name) {
  if (name == "cpt") return TrainMode::cpt;
  if (name == "sft") return TrainMode::sft;
  throw ConfigError("train.mode: unknown mode '" + std::string(name) + "' (expected cpt or sft)");
}

inline std::string_view to_string(TrainMode m) { return m == TrainMode::cpt ? "cpt" : "sft"; }

struct TrainConfig {
  std::size_t steps = 200;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;
  TrainMode mode = TrainMode::cpt;
  OptimGroups groups;
  /// Multiplies dL/dlogits before backward and divides the gradients after.
  double loss_scale = 1.0;
  RetrievalOptions retrieval;

  void validate() const {
    if (batch_size == 0) throw ConfigError("train.batch_size must be >= 1");
    if (!(loss_scale > 0.0)) throw ConfigError("train.loss_scale must be positive");
    groups.validate();
  }
};

struct StepRecord {
  std::size_t step = 0;
  double loss = 0.0;
  double lr_base = 0.0;
  double lr_inserted_dense = 0.0;
  double lr_memory = 0.0;
  std::size_t unique_indices = 0;  // distinct memory rows hit, summed over trainable blocks
  std::size_t table_writes = 0;    // global value-table row updates
};

struct TrainReport {
  std::vector<StepRecord> steps;
  double initial_eval_loss = 0.0;
  double final_eval_loss = 0.0;
  std::uint64_t frozen_checksum_before = 0;
  std::uint64_t frozen_checksum_after = 0;

  /// Columns: step, loss, lr_base, lr_inserted_dense, lr_memory_keys_values,
  /// unique_indices, table_writes.
  void write_csv(std::ostream& out) const {
    out << "step,loss,lr_base,lr_inserted_dense,lr_memory_keys_values,unique_indices,"
           "table_writes\n";
    out << std::setprecision(17);
    for (const auto& r : steps) {
      out << r.step << ',' << r.loss << ',' << r.lr_base << ',' << r.lr_inserted_dense << ','
          << r.lr_memory << ',' << r.unique_indices << ',' << r.table_writes << '\n';
    }
  }
};

template <Real T>
void apply_train_mode(ModelSpec<T>& spec, TrainMode mode) {
  if (mode == TrainMode::sft) {
    spec.trainable.assign(spec.blocks.size(), true);
    spec.train_embeddings = true;
  }
}

/// Mean eval-mode loss over the corpus's held-out set.
template <Real T>
double evaluate(const ModelSpec<T>& spec, const Corpus& corpus,
                const RetrievalOptions& retrieval = {}) {
  const auto& set = corpus.eval_set();
  if (set.empty()) throw ConfigError("data: empty evaluation set");
  ForwardOptions<T> fwd;
  fwd.retrieval = retrieval;
  double total = 0.0;
  for (const auto& e : set) {
    const Tensor<T> logits = model_forward(e.inputs, spec, fwd);
    total += static_cast<double>(lm_loss(logits, std::span<const Token>(e.targets),
                                         std::span<const std::uint8_t>(e.mask)));
  }
  return total / static_cast<double>(set.size());
}

namespace detail {

template <Real T>
void scale_all(ModelSpec<T>& grads, T factor) {
  visit_parameters(grads, [&](const ParamInfo&, Tensor<T>& t) {
    for (T& v : t.data()) v *= factor;
  });
}

template <Real T>
void update_query_stats(ModelSpec<T>& spec, const ModelCache<T>& cache) {
  for (std::size_t l = 0; l < spec.blocks.size(); ++l) {
    auto* mb = std::get_if<MemoryBlockParams<T>>(&spec.blocks[l]);
    if (!mb || !mb->layer.toggles.query_batchnorm) continue;
    const auto& c = std::get<MemoryBlockCache<T>>(cache.blocks[l]);
    update_running_stats(mb->query_stats, c.layer.batchnorm, c.input.rows());
  }
}

}  // namespace detail

/// Runs `cfg.steps` AdamW steps on batches drawn from `corpus`. Fully
/// deterministic given the seed. Throws NumericError on a non-finite loss
/// or gradient.
template <Real T>
TrainReport train(ModelSpec<T>& spec, const Corpus& corpus, const TrainConfig& cfg) {
  cfg.validate();
  spec.validate();
  if (corpus.vocab() > spec.dims.vocab) {
    throw ConfigError("data: corpus vocab " + std::to_string(corpus.vocab()) +
                      " exceeds model vocab " + std::to_string(spec.dims.vocab));
  }
  apply_train_mode(spec, cfg.mode);

  TrainReport report;
  report.frozen_checksum_before = parameter_checksum(spec, true);
  report.initial_eval_loss = evaluate(spec, corpus, cfg.retrieval);

  Rng rng = Rng(cfg.seed).fork(0xBA7C);
  AdamW<T> opt(spec);
  GradStore<T> store(spec);
  store.accumulate = true;
  ForwardOptions<T> fwd;
  fwd.mode = Mode::train;
  fwd.retrieval = cfg.retrieval;
  const T upstream = static_cast<T>(cfg.loss_scale / static_cast<double>(cfg.batch_size));
  const T unscale = static_cast<T>(1.0 / cfg.loss_scale);

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    store.zero();
    ScatterStats stats;
    BackwardOptions<T> bwd;
    bwd.scatter_stats = &stats;
    std::map<std::size_t, std::set<std::uint32_t>> hit;
    double loss = 0.0;
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      const Example e = corpus.sample(rng);
      ModelCache<T> cache;
      const Tensor<T> logits = model_forward(e.inputs, spec, fwd, &cache);
      Tensor<T> dlogits;
      loss += static_cast<double>(lm_loss(logits, std::span<const Token>(e.targets),
                                          std::span<const std::uint8_t>(e.mask), &dlogits));
      for (T& v : dlogits.data()) v *= upstream;
      model_backward(spec, cache, dlogits, store, bwd);
      detail::update_query_stats(spec, cache);
      for (std::size_t l = 0; l < spec.blocks.size(); ++l) {
        if (!spec.trainable[l] || !is_memory(spec.blocks[l])) continue;
        const auto& idx = std::get<MemoryBlockCache<T>>(cache.blocks[l]).layer.retrieval.indices;
        hit[l].insert(idx.begin(), idx.end());
      }
    }
    if (cfg.loss_scale != 1.0) detail::scale_all(store.grads, unscale);
    visit_parameters(store.grads, [&](const ParamInfo& info, const Tensor<T>& g) {
      if (!g.all_finite()) {
        throw NumericError("non-finite gradient in " + info.name + " at step " +
                           std::to_string(step));
      }
    });
    opt.step(spec, store.grads, cfg.groups, step, cfg.steps);

    StepRecord r;
    r.step = step;
    r.loss = loss / static_cast<double>(cfg.batch_size);
    r.lr_base = cfg.groups.lr(ParamGroup::base, step, cfg.steps);
    r.lr_inserted_dense = cfg.groups.lr(ParamGroup::inserted_dense, step, cfg.steps);
    r.lr_memory = cfg.groups.lr(ParamGroup::memory_keys_values, step, cfg.steps);
    for (const auto& [l, s] : hit) r.unique_indices += s.size();
    r.table_writes = stats.table_writes;
    report.steps.push_back(r);
  }

  report.final_eval_loss = evaluate(spec, corpus, cfg.retrieval);
  report.frozen_checksum_after = parameter_checksum(spec, true);
  return report;
}

}  // namespace midus

#endif  // MIDUS_TRAIN_TRAINER_HPP_
