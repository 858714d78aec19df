// Copyright 2026 The MIDUS Authors.
// SPDX-License-Identifier: Apache-2.0

#ifndef MIDUS_TRAIN_OPTIMIZER_HPP_
#define MIDUS_TRAIN_OPTIMIZER_HPP_

#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <string_view>

#include "midus/core/parameters.hpp"
#include "midus/train/model_backward.hpp"

namespace midus {

enum class ParamGroup { base, inserted_dense, memory_keys_values };

inline std::string_view to_string(ParamGroup g) {
  switch (g) {
    case ParamGroup::base: return "base";
    case ParamGroup::inserted_dense: return "inserted_dense";
    case ParamGroup::memory_keys_values: return "memory_keys_values";
  }
  return "?";
}

enum class Schedule { cosine_with_warmup, constant };

inline Schedule parse_schedule(std::string_view name) {
  if (name == "cosine_with_warmup") return Schedule::cosine_with_warmup;
  if (name == "constant") return Schedule::constant;
  throw ConfigError("unknown schedule '" + std::string(name) + "'");
}

struct GroupSettings {
  Schedule schedule = Schedule::cosine_with_warmup;
  double weight_decay = 0.0;
};

/// Per-group learning-rate schedule and weight decay. Memory keys/values run
/// at the constant peak rate without decay.
struct OptimGroups {
  double peak_lr = 3e-3;
  double warmup_ratio = 0.1;
  double min_lr_ratio = 0.0;
  GroupSettings base{Schedule::cosine_with_warmup, 0.0};
  GroupSettings inserted_dense{Schedule::cosine_with_warmup, 0.0};
  GroupSettings memory_keys_values{Schedule::constant, 0.0};

  void validate() const {
    if (!(peak_lr > 0.0)) throw ConfigError("train: lr must be positive");
    if (warmup_ratio < 0.0 || warmup_ratio > 1.0) {
      throw ConfigError("train: warmup_ratio must lie in [0, 1]");
    }
    if (memory_keys_values.schedule != Schedule::constant ||
        memory_keys_values.weight_decay != 0.0) {
      throw ConfigError(
          "train: memory keys/values must use a constant rate and zero weight decay");
    }
  }

  const GroupSettings& settings(ParamGroup g) const {
    switch (g) {
      case ParamGroup::base: return base;
      case ParamGroup::inserted_dense: return inserted_dense;
      case ParamGroup::memory_keys_values: return memory_keys_values;
    }
    return base;
  }

  /// Learning rate of group `g` at 0-based `step` of `total` steps.
  double lr(ParamGroup g, std::size_t step, std::size_t total) const {
    if (settings(g).schedule == Schedule::constant || total == 0) return peak_lr;
    const double warmup = std::floor(warmup_ratio * static_cast<double>(total));
    const double t = static_cast<double>(step);
    if (t < warmup) return peak_lr * (t + 1.0) / warmup;
    const double span = std::max(1.0, static_cast<double>(total) - warmup);
    const double progress = std::min(1.0, (t - warmup) / span);
    const double floor = peak_lr * min_lr_ratio;
    return floor + (peak_lr - floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  }
};

inline ParamGroup group_of(const ParamInfo& info) {
  if (info.in_memory_block && is_key_or_value(info.role)) {
    return ParamGroup::memory_keys_values;
  }
  return info.inserted || info.in_memory_block ? ParamGroup::inserted_dense
                                               : ParamGroup::base;
}

/// Decoupled-weight-decay Adam.
template <Real T>
class AdamW {
 public:
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;

  explicit AdamW(const ModelSpec<T>& model)
      : first_(zeros_like(model)), second_(zeros_like(model)) {}

  void step(ModelSpec<T>& model, const ModelSpec<T>& grads, const OptimGroups& groups,
            std::size_t step_index, std::size_t total_steps) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
    auto params = parameter_list(model);
    const auto g = parameter_list(grads);
    auto m = parameter_list(first_);
    auto v = parameter_list(second_);
    for (std::size_t i = 0; i < params.size(); ++i) {
      const ParamInfo& info = params[i].first;
      if (!is_trainable(model, info)) continue;
      const ParamGroup group = group_of(info);
      const double lr = groups.lr(group, step_index, total_steps);
      const double wd = groups.settings(group).weight_decay;
      Tensor<T>& p = *params[i].second;
      const Tensor<T>& gr = *g[i].second;
      Tensor<T>& mt = *m[i].second;
      Tensor<T>& vt = *v[i].second;
      for (std::size_t j = 0; j < p.size(); ++j) {
        const double gj = static_cast<double>(gr[j]);
        const double mj = beta1 * static_cast<double>(mt[j]) + (1.0 - beta1) * gj;
        const double vj = beta2 * static_cast<double>(vt[j]) + (1.0 - beta2) * gj * gj;
        mt[j] = static_cast<T>(mj);
        vt[j] = static_cast<T>(vj);
        const double update = (mj / c1) / (std::sqrt(vj / c2) + eps);
        const double pj = static_cast<double>(p[j]);
        p[j] = static_cast<T>(pj - lr * (update + wd * pj));
      }
    }
  }

 private:
  ModelSpec<T> first_;
  ModelSpec<T> second_;
  std::size_t t_ = 0;
};

}  // namespace midus

#endif  // MIDUS_TRAIN_OPTIMIZER_HPP_
