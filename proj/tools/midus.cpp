// Copyright 2026 The MIDUS Authors.
// SPDX-License-Identifier: Apache-2.0

// Command-line front end. Every subcommand reads an INI config (defaults
// apply when --config is omitted), applies flag overrides, revalidates and
// writes its CSV/JSON artifacts under --out.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "midus/midus.hpp"

namespace fs = std::filesystem;
using namespace midus;

namespace {

struct CommonFlags {
  std::string config;
  std::string out = "out";
  std::optional<std::uint64_t> seed;
  std::optional<std::string> precision;
  std::optional<std::size_t> fused_threshold;
};

void add_common(CLI::App* sub, CommonFlags& f) {
  sub->add_option("--config", f.config, "INI experiment config");
  sub->add_option("--out", f.out, "output directory")->capture_default_str();
  sub->add_option("--seed", f.seed, "override run.seed");
  sub->add_option("--precision", f.precision, "override run.precision")
      ->check(CLI::IsMember({"f32", "f64"}));
  sub->add_option("--fused-threshold", f.fused_threshold, "override run.fused_threshold");
}

ExperimentConfig resolve(const CommonFlags& f, const std::string& fallback_ini = {}) {
  ExperimentConfig c = !f.config.empty()        ? load_config(f.config)
                       : !fallback_ini.empty() ? parse_config_string(fallback_ini)
                                               : parse_config_string("");
  if (f.seed) c.seed = *f.seed;
  if (f.precision) c.precision = parse_precision(*f.precision);
  if (f.fused_threshold) c.fused_threshold = *f.fused_threshold;
  c.validate();
  return c;
}

std::ofstream open_output(const CommonFlags& f, const std::string& name) {
  fs::create_directories(f.out);
  const auto path = fs::path(f.out) / name;
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

template <Real T>
ModelSpec<T> checkpoint_model(const std::string& path, const ExperimentConfig& c) {
  ModelSpec<T> spec = load_checkpoint<T>(path);
  if (spec.dims != c.dims) {
    throw ConfigError("checkpoint " + path + " does not match [model] of the config");
  }
  return spec;
}

void require_vocab(std::size_t corpus_vocab, std::size_t model_vocab) {
  if (corpus_vocab > model_vocab) {
    throw ConfigError("data: corpus vocabulary " + std::to_string(corpus_vocab) +
                      " exceeds model.vocab " + std::to_string(model_vocab));
  }
}

template <Real T>
void cmd_train(const CommonFlags& f) {
  const ExperimentConfig c = resolve(f);
  const auto corpus = make_corpus(c);
  ModelSpec<T> spec = make_model<T>(c);
  const auto report = train(spec, *corpus, c.train_config());

  auto log = open_output(f, "train_log.csv");
  report.write_csv(log);
  open_output(f, "config.ini") << to_ini(c);
  save_checkpoint((fs::path(f.out) / "model.ckpt").string(), spec, to_ini(c));
  nlohmann::json summary = {
      {"steps", report.steps.size()},
      {"initial_eval_loss", report.initial_eval_loss},
      {"final_eval_loss", report.final_eval_loss},
      {"frozen_checksum_before", report.frozen_checksum_before},
      {"frozen_checksum_after", report.frozen_checksum_after},
      {"trainable_parameters", count_parameters(spec, true)},
      {"total_parameters", count_parameters(spec, false)},
      {"precision", std::string(to_string(c.precision))},
  };
  open_output(f, "summary.json") << summary.dump(2) << '\n';
  std::cout << "final_eval_loss " << report.final_eval_loss << '\n';
}

template <Real T>
void cmd_eval(const CommonFlags& f, const std::string& checkpoint) {
  const ExperimentConfig c = resolve(f, read_checkpoint_header(checkpoint).config_ini);
  const auto spec = checkpoint_model<T>(checkpoint, c);
  const auto corpus = make_corpus(c);
  require_vocab(corpus->vocab(), spec.dims.vocab);
  ForwardOptions<T> fwd;
  fwd.retrieval = c.retrieval();
  auto out = open_output(f, "eval.csv");
  out << "example,scored_tokens,loss\n" << std::setprecision(17);
  double total = 0.0;
  const auto& set = corpus->eval_set();
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto& e = set[i];
    const auto logits = model_forward(e.inputs, spec, fwd);
    const double loss = static_cast<double>(lm_loss(logits, std::span<const Token>(e.targets),
                                                    std::span<const std::uint8_t>(e.mask)));
    std::size_t scored = 0;
    for (auto m : e.mask) scored += m;
    out << i << ',' << scored << ',' << loss << '\n';
    total += loss;
  }
  std::cout << "eval_loss " << std::setprecision(17) << total / static_cast<double>(set.size())
            << '\n';
}

std::vector<std::size_t> parse_list(const std::string& text, const char* flag) {
  std::vector<std::size_t> out;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      std::size_t used = 0;
      const long long v = std::stoll(item, &used);
      if (used != item.size() || v <= 0) throw std::invalid_argument(item);
      out.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      throw ConfigError(std::string(flag) + ": expected positive integers, got '" + item + "'");
    }
  }
  if (out.empty()) throw ConfigError(std::string(flag) + ": empty list");
  return out;
}

void cmd_bench_topk(const CommonFlags& f, std::size_t max_tokens, std::size_t repeats) {
  const ExperimentConfig c = resolve(f);
  std::vector<std::size_t> tokens;
  for (std::size_t t = 1; t <= max_tokens; t *= 2) tokens.push_back(t);
  const auto rows = bench_topk(c.sub_keys, c.top_k, tokens, repeats, c.seed);
  auto out = open_output(f, "bench_topk.csv");
  write_topk_csv(out, rows);
  write_topk_csv(std::cout, rows);
}

template <Real T>
void cmd_bench_prefill(const CommonFlags& f, const std::string& lengths, std::size_t repeats) {
  const ExperimentConfig c = resolve(f);
  const auto base = make_base_model<T>(c);
  const auto& tb = std::get<TransformerBlockParams<T>>(base.blocks.front());
  Rng rng = Rng(c.seed).fork(0xBE7C);
  auto mb = MemoryBlockParams<T>::from_attention(c.memory, c.memory_config(), tb.attn_norm,
                                                 tb.attn, rng);
  const auto rows = bench_prefill(tb, mb, c.dims, parse_list(lengths, "--lengths"), repeats,
                                  c.seed, c.retrieval());
  auto out = open_output(f, "bench_prefill.csv");
  write_prefill_csv(out, rows);
  write_prefill_csv(std::cout, rows);
}

void cmd_params(const CommonFlags& f) {
  const ExperimentConfig c = resolve(f);
  const auto base = make_base_model<float>(c);
  auto out = open_output(f, "params.csv");
  std::ostringstream table;
  table << "method,trainable,total\n";
  auto row = [&](const char* name, const ModelSpec<float>& m) {
    table << name << ',' << count_parameters(m, true) << ',' << count_parameters(m, false) << '\n';
  };
  auto dus = UpscalePlan::dus(c.inserted, c.policy);
  dus.seed = c.plan().seed;
  row("dus_copy", build_dus(base, dus));
  for (auto [name, kind] : {std::pair{"midus_linear", MemoryKind::linear},
                            std::pair{"midus_pkm", MemoryKind::pkm},
                            std::pair{"midus_hml", MemoryKind::hml}}) {
    auto plan = UpscalePlan::midus(kind, c.memory_config(), c.inserted, c.policy);
    plan.seed = c.plan().seed;
    row(name, build_midus(base, plan));
  }
  out << table.str();
  std::cout << table.str();
}

void cmd_policy(const CommonFlags& f, std::optional<std::size_t> layers,
                std::optional<std::size_t> inserted, std::optional<std::string> policy) {
  const ExperimentConfig c = resolve(f);
  const PolicyName name = policy ? parse_policy(*policy) : c.policy;
  const auto idx = policy_indices(
      PlacementPolicy{name, layers.value_or(c.layers), inserted.value_or(c.inserted)});
  std::cout << to_string(name) << ": {";
  for (std::size_t i = 0; i < idx.size(); ++i) std::cout << (i ? "," : "") << idx[i];
  std::cout << "}\n";
}

template <Real T>
void cmd_head_importance(const CommonFlags& f, const std::string& checkpoint) {
  const ExperimentConfig c = resolve(f, read_checkpoint_header(checkpoint).config_ini);
  const auto spec = checkpoint_model<T>(checkpoint, c);
  const auto corpus = make_corpus(c);
  require_vocab(corpus->vocab(), spec.dims.vocab);
  const auto report = head_importance(spec, corpus->eval_set(), c.retrieval());
  auto scores = open_output(f, "head_importance.csv");
  report.write_scores_csv(scores);
  auto variance = open_output(f, "head_variance.csv");
  report.write_variance_csv(variance);
  std::cout << report.layers() * report.heads() << " head scores over " << report.layers()
            << " layers\n";
}

int cmd_gradcheck(const CommonFlags& f, const std::string& corrupt) {
  const ExperimentConfig c = resolve(f);
  const auto spec = gradcheck_model(c.dims, c.memory_config(), c.seed);
  const auto data = random_examples(c.dims.vocab, 8, 2, c.seed + 1);
  GradcheckOptions opts;
  opts.seed = c.seed;
  opts.corrupt = corrupt;
  const auto report = gradcheck(spec, data, opts);
  auto out = open_output(f, "gradcheck.csv");
  report.write_csv(out);
  report.write_csv(std::cout);
  std::cout << (report.passed() ? "PASS" : "FAIL") << ": " << report.checked()
            << " coordinates checked\n";
  return report.passed() ? 0 : 1;
}

template <typename Fn>
void by_precision(const ExperimentConfig& c, Fn&& fn) {
  if (c.precision == Precision::f64) {
    fn.template operator()<double>();
  } else {
    fn.template operator()<float>();
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Memory-infused depth up-scaling toolkit"};
  app.require_subcommand(1);
  CommonFlags flags;

  auto* train_cmd = app.add_subcommand("train", "train an upscaled model");
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the held-out set");
  auto* topk_cmd = app.add_subcommand("bench-topk", "time two-stage vs fused top-k");
  auto* prefill_cmd = app.add_subcommand("bench-prefill", "time and count block prefill");
  auto* params_cmd = app.add_subcommand("params", "parameter accounting per method");
  auto* policy_cmd = app.add_subcommand("policy", "print a placement index set");
  auto* heads_cmd = app.add_subcommand("head-importance", "per-head importance scores");
  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient check");
  for (auto* sub : {train_cmd, eval_cmd, topk_cmd, prefill_cmd, params_cmd, policy_cmd, heads_cmd,
                    grad_cmd}) {
    add_common(sub, flags);
  }

  std::string checkpoint;
  eval_cmd->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  heads_cmd->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  std::size_t max_tokens = 256, repeats = 20;
  topk_cmd->add_option("--max-tokens", max_tokens, "largest token count of the sweep")
      ->capture_default_str();
  topk_cmd->add_option("--repeats", repeats, "timed calls per row")->capture_default_str();
  std::string lengths = "16,32,64,128,256";
  prefill_cmd->add_option("--lengths", lengths, "comma-separated prompt lengths")
      ->capture_default_str();
  prefill_cmd->add_option("--repeats", repeats, "timed calls per row")->capture_default_str();
  std::optional<std::size_t> layers, inserted;
  std::optional<std::string> policy;
  policy_cmd->add_option("--layers", layers, "base depth L");
  policy_cmd->add_option("--inserted", inserted, "inserted blocks K");
  policy_cmd->add_option("--policy", policy, "distributed, llama_pro, top_heavy, bottom_heavy");
  std::string corrupt;
  grad_cmd->add_option("--corrupt", corrupt)->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (repeats == 0) throw ConfigError("--repeats must be >= 1");
    if (*train_cmd) {
      by_precision(resolve(flags), [&]<Real T>() { cmd_train<T>(flags); });
    } else if (*eval_cmd) {
      const auto ini = read_checkpoint_header(checkpoint).config_ini;
      by_precision(resolve(flags, ini), [&]<Real T>() { cmd_eval<T>(flags, checkpoint); });
    } else if (*topk_cmd) {
      cmd_bench_topk(flags, max_tokens, repeats);
    } else if (*prefill_cmd) {
      by_precision(resolve(flags),
                   [&]<Real T>() { cmd_bench_prefill<T>(flags, lengths, repeats); });
    } else if (*params_cmd) {
      cmd_params(flags);
    } else if (*policy_cmd) {
      cmd_policy(flags, layers, inserted, policy);
    } else if (*heads_cmd) {
      const auto ini = read_checkpoint_header(checkpoint).config_ini;
      by_precision(resolve(flags, ini),
                   [&]<Real T>() { cmd_head_importance<T>(flags, checkpoint); });
    } else if (*grad_cmd) {
      return cmd_gradcheck(flags, corrupt);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric abort: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
