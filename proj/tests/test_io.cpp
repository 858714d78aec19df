// Copyright 2026 The MIDUS Authors.
// SPDX-License-Identifier: Apache-2.0

#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "midus/io/checkpoint.hpp"
#include "midus/io/config.hpp"

namespace midus {
namespace {

namespace fs = std::filesystem;

std::string tmp_path(const std::string& name) {
  fs::create_directories(MIDUS_TEST_TMP);
  return (fs::path(MIDUS_TEST_TMP) / name).string();
}

const char* kSmall = R"([model]
vocab = 64
d_model = 16
heads = 2
d_ff = 32
layers = 4
init_std = 0.1

[memory]
kind = pkm
sub_keys = 4
top_k = 2
query_layernorm = true

[upscale]
policy = top_heavy
inserted = 2

[train]
steps = 5
batch_size = 2
lr = 0.001

[data]
recall_keys = 16
recall_pairs = 3
eval_examples = 4

[run]
seed = 42
precision = f64
topk_path = two_stage
)";

TEST(Config, DefaultsFromEmptyText) {
  const auto c = parse_config_string("");
  EXPECT_EQ(c.dims.d_model, 64u);
  EXPECT_EQ(c.layers, 8u);
  EXPECT_EQ(c.memory.kind, MemoryKind::hml);
  EXPECT_FALSE(c.memory.toggles.query_batchnorm);
  EXPECT_EQ(c.policy, PolicyName::distributed);
  EXPECT_EQ(c.init_source, InitSource::subsequent);
  EXPECT_EQ(c.precision, Precision::f32);
  EXPECT_EQ(c.corpus, "recall");
}

TEST(Config, ParsesEverySection) {
  const auto c = parse_config_string(kSmall);
  EXPECT_EQ(c.dims.vocab, 64u);
  EXPECT_EQ(c.layers, 4u);
  EXPECT_DOUBLE_EQ(c.init_std, 0.1);
  EXPECT_EQ(c.memory.kind, MemoryKind::pkm);
  EXPECT_TRUE(c.memory.toggles.query_batchnorm);
  EXPECT_TRUE(c.memory.toggles.query_layernorm);
  EXPECT_EQ(c.policy, PolicyName::top_heavy);
  EXPECT_EQ(c.train.steps, 5u);
  EXPECT_DOUBLE_EQ(c.train.groups.peak_lr, 0.001);
  EXPECT_EQ(c.seed, 42u);
  EXPECT_EQ(c.precision, Precision::f64);
  EXPECT_EQ(c.topk_path, TopkPath::two_stage);
  EXPECT_EQ(c.train_config().seed, 42u);
  EXPECT_EQ(c.memory_config(), (MemoryConfig{2, 4, 2, 16}));
}

TEST(Config, DusDefaultsToPrecedingCopies) {
  const auto c = parse_config_string("[upscale]\nmethod = dus\n");
  EXPECT_EQ(c.policy, PolicyName::llama_pro);
  EXPECT_EQ(c.init_source, InitSource::preceding);
  EXPECT_EQ(c.plan().insert_kind, InsertKind::transformer_copy);
}

void expect_config_error(const std::string& text, const std::string& needle) {
  try {
    parse_config_string(text);
    FAIL() << "accepted: " << text;
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
  }
}

TEST(Config, RejectsUnknownAndMalformedEntries) {
  expect_config_error("[model]\nwidth = 3\n", "model.width");
  expect_config_error("[extras]\na = 1\n", "extras");
  expect_config_error("stray = 1\n", "stray");
  expect_config_error("[model]\nlayers = -2\n", "model.layers");
  expect_config_error("[model]\nlayers = 3x\n", "model.layers");
  expect_config_error("[memory]\nquery_layernorm = maybe\n", "memory.query_layernorm");
  expect_config_error("[memory]\nkind = dense\n", "dense");
  expect_config_error("[upscale]\npolicy = sideways\n", "sideways");
  expect_config_error("[run]\nprecision = f16\n", "run.precision");
  expect_config_error("[train]\nmode = rl\n", "train.mode");
  expect_config_error("[model]\nlayers = 2\n", "upscale.inserted");
  expect_config_error("[memory]\nkind = pkm\noutput_projection = true\n", "memory.output_projection");
  expect_config_error("[memory]\ntop_k = 40\n", "top_k");
  expect_config_error("[data]\nrecall_keys = 200\n", "data.recall_keys");
  expect_config_error("[model]\nheads = 3\n", "heads");
}

TEST(Config, IniRoundTrip) {
  const auto c = parse_config_string(kSmall);
  const std::string text = to_ini(c);
  EXPECT_EQ(to_ini(parse_config_string(text)), text);
}

TEST(Config, FileLoadingAndMissingFile) {
  const auto path = tmp_path("small.ini");
  std::ofstream(path) << kSmall;
  EXPECT_EQ(load_config(path).seed, 42u);
  EXPECT_THROW(load_config(tmp_path("absent.ini")), ConfigError);
}

TEST(Config, BuiltModelIsIdentityAtInit) {
  const auto c = parse_config_string(kSmall);
  const auto base = make_base_model<double>(c);
  const auto up = make_model<double>(c);
  EXPECT_EQ(up.blocks.size(), 6u);
  const std::vector<Token> tokens{1, 5, 9, 2, 40};
  EXPECT_EQ(model_forward(tokens, up), model_forward(tokens, base));
  const auto corpus = make_corpus(c);
  EXPECT_EQ(corpus->vocab(), 32u);
  auto text = c;
  text.corpus = tmp_path("absent.txt");
  text.dims.vocab = 256;
  EXPECT_THROW(make_corpus(text), ConfigError);
}

ModelSpec<double> trained_like_model() {
  auto c = parse_config_string(kSmall);
  auto m = make_model<double>(c);
  Rng rng(3);
  for (auto& b : m.blocks) {
    if (auto* mb = std::get_if<MemoryBlockParams<double>>(&b)) {
      mb->values = random_normal<double>(mb->values.shape(), rng);
      mb->query_stats.running_mean = random_normal<double>(mb->query_stats.running_mean.shape(), rng);
    }
  }
  return m;
}

TEST(Checkpoint, RoundTripIsBitwise) {
  const auto m = trained_like_model();
  const auto path = tmp_path("model.ckpt");
  const std::string ini = to_ini(parse_config_string(kSmall));
  save_checkpoint(path, m, ini);
  const auto back = load_checkpoint<double>(path);
  EXPECT_EQ(back, m);
  EXPECT_EQ(read_checkpoint_header(path).config_ini, ini);
  const std::vector<Token> tokens{3, 1, 4, 1, 5};
  EXPECT_EQ(model_forward(tokens, back), model_forward(tokens, m));
}

TEST(Checkpoint, EveryMemoryKindAndToggleSurvives) {
  for (const char* kind : {"linear", "pkm", "hml"}) {
    std::string text = std::string(kSmall);
    text.replace(text.find("kind = pkm"), 10, std::string("kind = ") + kind);
    if (std::string(kind) == "hml") {
      text.replace(text.find("query_layernorm = true"), 22,
                   "internal_residual = true\noutput_projection = true");
    }
    const auto m = make_model<double>(parse_config_string(text));
    const auto path = tmp_path(std::string("kind_") + kind + ".ckpt");
    save_checkpoint(path, m);
    EXPECT_EQ(load_checkpoint<double>(path), m) << kind;
  }
}

TEST(Checkpoint, FloatRoundTripAndPrecisionConversion) {
  auto c = parse_config_string(kSmall);
  const auto mf = make_model<float>(c);
  const auto path = tmp_path("model_f32.ckpt");
  save_checkpoint(path, mf);
  EXPECT_EQ(load_checkpoint<float>(path), mf);
  EXPECT_EQ(read_checkpoint_header(path).json.at("dtype"), "f32");
  const auto md = load_checkpoint<double>(path);
  EXPECT_EQ(md.embedding, mf.embedding.cast<double>());
}

TEST(Checkpoint, CorruptionIsDetected) {
  const auto m = trained_like_model();
  const auto path = tmp_path("corrupt.ckpt");
  save_checkpoint(path, m);
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(-5, std::ios::end);
    char byte = 0;
    f.read(&byte, 1);
    byte = static_cast<char>(byte ^ 0x40);
    f.seekp(-5, std::ios::end);
    f.write(&byte, 1);
  }
  EXPECT_THROW(load_checkpoint<double>(path), ConfigError);
  const auto junk = tmp_path("junk.ckpt");
  std::ofstream(junk) << "not a checkpoint at all";
  EXPECT_THROW(load_checkpoint<double>(junk), ConfigError);
  EXPECT_THROW(load_checkpoint<double>(tmp_path("absent.ckpt")), ConfigError);
}

TEST(Checkpoint, TruncationIsDetected) {
  const auto m = trained_like_model();
  const auto path = tmp_path("short.ckpt");
  save_checkpoint(path, m);
  fs::resize_file(path, fs::file_size(path) - 16);
  EXPECT_THROW(load_checkpoint<double>(path), ConfigError);
}

}  // namespace
}  // namespace midus
