// Copyright 2026 The MIDUS Authors.
// SPDX-License-Identifier: Apache-2.0

#ifndef MIDUS_IO_CONFIG_HPP_
#define MIDUS_IO_CONFIG_HPP_

#include <cstddef>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "midus/core/model.hpp"
#include "midus/train/corpus.hpp"
#include "midus/train/trainer.hpp"
#include "midus/upscale/upscaler.hpp"

namespace midus {

enum class Precision { f32, f64 };

inline Precision parse_precision(std::string_view name) {
  if (name == "f32") return Precision::f32;
  if (name == "f64") return Precision::f64;
  throw ConfigError("run.precision: unknown precision '" + std::string(name) +
                    "' (expected f32 or f64)");
}

inline std::string_view to_string(Precision p) { return p == Precision::f32 ? "f32" : "f64"; }

inline TopkPath parse_topk_path(std::string_view name) {
  if (name == "automatic") return TopkPath::automatic;
  if (name == "two_stage") return TopkPath::two_stage;
  if (name == "fused") return TopkPath::fused;
  throw ConfigError("run.topk_path: unknown path '" + std::string(name) +
                    "' (expected automatic, two_stage or fused)");
}

inline std::string_view to_string(TopkPath p) {
  switch (p) {
    case TopkPath::automatic: return "automatic";
    case TopkPath::two_stage: return "two_stage";
    case TopkPath::fused: return "fused";
  }
  return "?";
}

/// How the trained model is derived from the base: memory blocks, Transformer
/// copies, or no expansion at all (the frozen-base reference).
enum class UpscaleMethod { midus, dus, none };

inline UpscaleMethod parse_upscale_method(std::string_view name) {
  if (name == "midus") return UpscaleMethod::midus;
  if (name == "dus") return UpscaleMethod::dus;
  if (name == "none") return UpscaleMethod::none;
  throw ConfigError("upscale.method: unknown method '" + std::string(name) +
                    "' (expected midus, dus or none)");
}

inline std::string_view to_string(UpscaleMethod m) {
  switch (m) {
    case UpscaleMethod::midus: return "midus";
    case UpscaleMethod::dus: return "dus";
    case UpscaleMethod::none: return "none";
  }
  return "?";
}

/// Everything a run needs. See README for the file schema.
struct ExperimentConfig {
  ModelDims dims;
  std::size_t layers = 8;
  double init_std = 0.02;

  MemoryLayerKind memory = MemoryLayerKind::defaults(MemoryKind::hml);
  std::size_t sub_keys = 16;
  std::size_t top_k = 4;

  UpscaleMethod method = UpscaleMethod::midus;
  PolicyName policy = PolicyName::distributed;
  std::size_t inserted = 4;
  InitSource init_source = InitSource::subsequent;
  bool identity_init = true;

  TrainConfig train;
  double weight_decay = 0.0;

  std::string corpus = "recall";  // "recall" or a path to a byte file
  std::size_t seq_len = 64;
  std::size_t recall_keys = 128;
  std::size_t recall_pairs = 4;
  std::size_t eval_examples = 64;

  std::uint64_t seed = 0;
  Precision precision = Precision::f32;
  std::size_t fused_threshold = kDefaultFusedThreshold;
  TopkPath topk_path = TopkPath::automatic;

  MemoryConfig memory_config() const {
    MemoryConfig c;
    c.heads = dims.heads;
    c.sub_keys = sub_keys;
    c.top_k = top_k;
    c.model_dim = dims.d_model;
    return c;
  }

  RetrievalOptions retrieval() const {
    RetrievalOptions r;
    r.path = topk_path;
    r.fused_threshold = fused_threshold;
    return r;
  }

  UpscalePlan plan() const {
    UpscalePlan p;
    p.policy = policy;
    p.inserted = inserted;
    p.insert_kind = method == UpscaleMethod::dus ? InsertKind::transformer_copy
                                                  : InsertKind::memory_block;
    p.init_source = init_source;
    p.memory = memory;
    p.memory_cfg = memory_config();
    p.identity_init = identity_init;
    p.seed = Rng(seed).fork(0x0905).next_u64();
    return p;
  }

  TrainConfig train_config() const {
    TrainConfig t = train;
    t.seed = seed;
    t.retrieval = retrieval();
    t.groups.base.weight_decay = weight_decay;
    t.groups.inserted_dense.weight_decay = weight_decay;
    return t;
  }

  /// Throws ConfigError naming the offending key.
  void validate() const {
    dims.validate();
    if (layers == 0) throw ConfigError("model.layers must be >= 1");
    if (!(init_std > 0.0)) throw ConfigError("model.init_std must be positive");
    memory_config().validate();
    if (method != UpscaleMethod::none && inserted > layers) {
      throw ConfigError("upscale.inserted " + std::to_string(inserted) +
                        " exceeds model.layers " + std::to_string(layers));
    }
    if (memory.toggles.output_projection && memory.kind != MemoryKind::hml) {
      throw ConfigError("memory.output_projection applies to kind = hml only");
    }
    if (memory.toggles.internal_residual && memory.kind != MemoryKind::hml) {
      throw ConfigError("memory.internal_residual applies to kind = hml only");
    }
    if (seq_len == 0) throw ConfigError("data.seq_len must be >= 1");
    if (eval_examples == 0) throw ConfigError("data.eval_examples must be >= 1");
    if (corpus == "recall") {
      if (recall_pairs == 0 || recall_pairs > recall_keys) {
        throw ConfigError("data.recall_pairs must lie in [1, data.recall_keys]");
      }
      if (2 * recall_keys > dims.vocab) {
        throw ConfigError("data.recall_keys: 2 * " + std::to_string(recall_keys) +
                          " tokens exceed model.vocab " + std::to_string(dims.vocab));
      }
    } else if (dims.vocab < 256) {
      throw ConfigError("model.vocab must be >= 256 for a byte corpus");
    }
    if (fused_threshold == 0) throw ConfigError("run.fused_threshold must be >= 1");
    train_config().validate();
  }
};

namespace detail {

using boost::property_tree::ptree;

inline const std::map<std::string, std::set<std::string>>& config_schema() {
  static const std::map<std::string, std::set<std::string>> schema = {
      {"model", {"vocab", "d_model", "heads", "d_ff", "layers", "init_std"}},
      {"memory",
       {"kind", "sub_keys", "top_k", "query_batchnorm", "query_layernorm", "internal_residual",
        "output_projection"}},
      {"upscale", {"method", "policy", "inserted", "init_source", "identity_init"}},
      {"train",
       {"steps", "batch_size", "lr", "warmup_ratio", "min_lr_ratio", "weight_decay", "mode",
        "loss_scale"}},
      {"data", {"corpus", "seq_len", "recall_keys", "recall_pairs", "eval_examples"}},
      {"run", {"seed", "precision", "fused_threshold", "topk_path"}},
  };
  return schema;
}

template <typename V>
V read_value(const ptree& tree, const std::string& key, V fallback) {
  const auto node = tree.get_child_optional(ptree::path_type(key, '.'));
  if (!node) return fallback;
  const std::string raw = node->data();
  if constexpr (std::is_same_v<V, std::string>) {
    return raw;
  } else if constexpr (std::is_same_v<V, bool>) {
    if (raw == "true" || raw == "1") return true;
    if (raw == "false" || raw == "0") return false;
    throw ConfigError(key + ": expected true or false, got '" + raw + "'");
  } else {
    std::istringstream in(raw);
    V v{};
    in >> v;
    if (raw.empty() || !in || !in.eof() || (std::is_unsigned_v<V> && raw.front() == '-')) {
      throw ConfigError(key + ": cannot parse '" + raw + "'");
    }
    return v;
  }
}

}  // namespace detail

/// Parses INI text. Unknown sections or keys are rejected.
inline ExperimentConfig parse_config(std::istream& in) {
  detail::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError("config: " + std::string(e.what()));
  }
  const auto& schema = detail::config_schema();
  for (const auto& [section, body] : tree) {
    const auto it = schema.find(section);
    if (it == schema.end() || !body.data().empty()) {
      throw ConfigError("config: unknown section or top-level key '" + section + "'");
    }
    for (const auto& [key, value] : body) {
      if (!it->second.count(key)) throw ConfigError("config: unknown key '" + section + "." + key + "'");
    }
  }
  using detail::read_value;
  ExperimentConfig c;
  c.dims.vocab = read_value(tree, "model.vocab", c.dims.vocab);
  c.dims.d_model = read_value(tree, "model.d_model", c.dims.d_model);
  c.dims.heads = read_value(tree, "model.heads", c.dims.heads);
  c.dims.d_ff = read_value(tree, "model.d_ff", c.dims.d_ff);
  c.layers = read_value(tree, "model.layers", c.layers);
  c.init_std = read_value(tree, "model.init_std", c.init_std);

  c.memory = MemoryLayerKind::defaults(
      parse_memory_kind(read_value<std::string>(tree, "memory.kind", "hml")));
  auto& tg = c.memory.toggles;
  tg.query_batchnorm = read_value(tree, "memory.query_batchnorm", tg.query_batchnorm);
  tg.query_layernorm = read_value(tree, "memory.query_layernorm", tg.query_layernorm);
  tg.internal_residual = read_value(tree, "memory.internal_residual", tg.internal_residual);
  tg.output_projection = read_value(tree, "memory.output_projection", tg.output_projection);
  c.sub_keys = read_value(tree, "memory.sub_keys", c.sub_keys);
  c.top_k = read_value(tree, "memory.top_k", c.top_k);

  c.method = parse_upscale_method(read_value<std::string>(tree, "upscale.method", "midus"));
  const bool dus = c.method == UpscaleMethod::dus;
  c.policy = parse_policy(
      read_value<std::string>(tree, "upscale.policy", dus ? "llama_pro" : "distributed"));
  c.inserted = read_value(tree, "upscale.inserted", c.inserted);
  c.init_source = parse_init_source(
      read_value<std::string>(tree, "upscale.init_source", dus ? "preceding" : "subsequent"));
  c.identity_init = read_value(tree, "upscale.identity_init", c.identity_init);

  c.train.steps = read_value(tree, "train.steps", c.train.steps);
  c.train.batch_size = read_value(tree, "train.batch_size", c.train.batch_size);
  c.train.groups.peak_lr = read_value(tree, "train.lr", c.train.groups.peak_lr);
  c.train.groups.warmup_ratio = read_value(tree, "train.warmup_ratio", c.train.groups.warmup_ratio);
  c.train.groups.min_lr_ratio = read_value(tree, "train.min_lr_ratio", c.train.groups.min_lr_ratio);
  c.weight_decay = read_value(tree, "train.weight_decay", c.weight_decay);
  c.train.mode = parse_train_mode(read_value<std::string>(tree, "train.mode", "cpt"));
  c.train.loss_scale = read_value(tree, "train.loss_scale", c.train.loss_scale);

  c.corpus = read_value(tree, "data.corpus", c.corpus);
  c.seq_len = read_value(tree, "data.seq_len", c.seq_len);
  c.recall_keys = read_value(tree, "data.recall_keys", c.recall_keys);
  c.recall_pairs = read_value(tree, "data.recall_pairs", c.recall_pairs);
  c.eval_examples = read_value(tree, "data.eval_examples", c.eval_examples);

  c.seed = read_value(tree, "run.seed", c.seed);
  c.precision = parse_precision(read_value<std::string>(tree, "run.precision", "f32"));
  c.fused_threshold = read_value(tree, "run.fused_threshold", c.fused_threshold);
  c.topk_path = parse_topk_path(read_value<std::string>(tree, "run.topk_path", "automatic"));
  c.validate();
  return c;
}

inline ExperimentConfig parse_config_string(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in);
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  return parse_config(in);
}

/// INI text that parses back to an equal configuration.
inline std::string to_ini(const ExperimentConfig& c) {
  std::ostringstream o;
  o << std::setprecision(17) << std::boolalpha;
  const auto& tg = c.memory.toggles;
  o << "[model]\nvocab = " << c.dims.vocab << "\nd_model = " << c.dims.d_model
    << "\nheads = " << c.dims.heads << "\nd_ff = " << c.dims.d_ff << "\nlayers = " << c.layers
    << "\ninit_std = " << c.init_std << "\n\n";
  o << "[memory]\nkind = " << to_string(c.memory.kind) << "\nsub_keys = " << c.sub_keys
    << "\ntop_k = " << c.top_k << "\nquery_batchnorm = " << tg.query_batchnorm
    << "\nquery_layernorm = " << tg.query_layernorm
    << "\ninternal_residual = " << tg.internal_residual
    << "\noutput_projection = " << tg.output_projection << "\n\n";
  o << "[upscale]\nmethod = " << to_string(c.method) << "\npolicy = " << to_string(c.policy)
    << "\ninserted = " << c.inserted << "\ninit_source = " << to_string(c.init_source)
    << "\nidentity_init = " << c.identity_init << "\n\n";
  o << "[train]\nsteps = " << c.train.steps << "\nbatch_size = " << c.train.batch_size
    << "\nlr = " << c.train.groups.peak_lr << "\nwarmup_ratio = " << c.train.groups.warmup_ratio
    << "\nmin_lr_ratio = " << c.train.groups.min_lr_ratio << "\nweight_decay = " << c.weight_decay
    << "\nmode = " << to_string(c.train.mode) << "\nloss_scale = " << c.train.loss_scale
    << "\n\n";
  o << "[data]\ncorpus = " << c.corpus << "\nseq_len = " << c.seq_len
    << "\nrecall_keys = " << c.recall_keys << "\nrecall_pairs = " << c.recall_pairs
    << "\neval_examples = " << c.eval_examples << "\n\n";
  o << "[run]\nseed = " << c.seed << "\nprecision = " << to_string(c.precision)
    << "\nfused_threshold = " << c.fused_threshold << "\ntopk_path = " << to_string(c.topk_path)
    << "\n";
  return o.str();
}

/// The randomly initialized base model of a run.
template <Real T>
ModelSpec<T> make_base_model(const ExperimentConfig& c) {
  Rng rng = Rng(c.seed).fork(0xBA5E);
  ModelSpec<T> base = ModelSpec<T>::random(c.dims, c.layers, rng, c.init_std);
  base.trainable.assign(base.blocks.size(), false);
  base.train_embeddings = false;
  return base;
}

/// Base model expanded per the [upscale] section.
template <Real T>
ModelSpec<T> make_model(const ExperimentConfig& c) {
  ModelSpec<T> base = make_base_model<T>(c);
  if (c.method == UpscaleMethod::none) return base;
  return upscale(base, c.plan());
}

inline std::unique_ptr<Corpus> make_corpus(const ExperimentConfig& c) {
  if (c.corpus == "recall") {
    return std::make_unique<RecallCorpus>(c.recall_keys, c.recall_pairs, c.eval_examples, c.seed);
  }
  return std::make_unique<TextCorpus>(
      TextCorpus::from_file(c.corpus, c.seq_len, c.eval_examples, c.seed));
}

}  // namespace midus

#endif  // MIDUS_IO_CONFIG_HPP_
