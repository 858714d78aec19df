// Copyright 2026 The MIDUS Authors.
// SPDX-License-Identifier: Apache-2.0

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

namespace {

namespace fs = std::filesystem;

struct RunResult {
  int code = -1;
  std::string output;  // stdout and stderr
};

RunResult run(const std::string& args) {
  const std::string cmd = std::string(MIDUS_CLI_PATH) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return {};
  RunResult r;
  char buf[4096];
  while (std::fgets(buf, sizeof(buf), pipe)) r.output += buf;
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string dir(const std::string& name) {
  const auto p = fs::path(MIDUS_TEST_TMP) / "cli" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::vector<std::string>> csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> row;
    std::istringstream cells(line);
    std::string cell;
    while (std::getline(cells, cell, ',')) row.push_back(cell);
    rows.push_back(row);
  }
  return rows;
}

const char* kTiny = R"([model]
vocab = 32
d_model = 16
heads = 2
d_ff = 32
layers = 4
init_std = 0.1

[memory]
sub_keys = 4
top_k = 2

[upscale]
inserted = 2

[train]
steps = 6
batch_size = 2
lr = 0.01

[data]
recall_keys = 8
recall_pairs = 3
eval_examples = 4

[run]
precision = f64
seed = 5
)";

std::string write_config(const std::string& d, const std::string& text) {
  const auto path = (fs::path(d) / "config.ini").string();
  std::ofstream(path) << text;
  return path;
}

TEST(Cli, MissingCorpusExitsWithConfigError) {
  const auto d = dir("missing_corpus");
  const auto cfg = write_config(d, std::string(kTiny) + "\n");
  std::string text = slurp(cfg);
  text.replace(text.find("[data]\n"), 7, "[data]\ncorpus = /nonexistent/bytes.txt\n");
  text.replace(text.find("vocab = 32"), 10, "vocab = 256");
  std::ofstream(cfg) << text;
  const auto r = run("train --config " + cfg + " --out " + d + "/out");
  EXPECT_EQ(r.code, 2) << r.output;
  EXPECT_NE(r.output.find("data.corpus"), std::string::npos) << r.output;
}

TEST(Cli, InvalidConfigAndFlagsExitTwo) {
  const auto d = dir("invalid");
  const auto cfg = write_config(d, "[model]\nwidth = 4\n");
  const auto r = run("params --config " + cfg);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("model.width"), std::string::npos) << r.output;
  EXPECT_EQ(run("params --precision f16").code, 2);
  EXPECT_EQ(run("nonsense").code, 2);
  EXPECT_EQ(run("policy --layers 4 --inserted 9 --out " + d).code, 2);
}

TEST(Cli, PolicyPrintsPublishedSets) {
  const auto d = dir("policy");
  auto r = run("policy --layers 16 --inserted 8 --policy distributed --out " + d);
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(r.output, "distributed: {1,4,7,10,13,16,19,22}\n");
  r = run("policy --layers 16 --inserted 8 --policy llama_pro --out " + d);
  EXPECT_EQ(r.output, "llama_pro: {2,5,8,11,14,17,20,23}\n");
  r = run("policy --layers 32 --inserted 16 --policy top_heavy --out " + d);
  EXPECT_EQ(r.output,
            "top_heavy: {16,18,20,22,24,26,28,30,32,34,36,38,40,42,44,46}\n");
}

TEST(Cli, TrainIsDeterministicAndWritesArtifacts) {
  const auto d = dir("train");
  const auto cfg = write_config(d, kTiny);
  const auto a = run("train --config " + cfg + " --out " + d + "/a");
  const auto b = run("train --config " + cfg + " --out " + d + "/b");
  ASSERT_EQ(a.code, 0) << a.output;
  ASSERT_EQ(b.code, 0) << b.output;
  const auto log = slurp(d + "/a/train_log.csv");
  EXPECT_EQ(log, slurp(d + "/b/train_log.csv"));
  EXPECT_EQ(csv(log).size(), 7u);
  EXPECT_EQ(slurp(d + "/a/summary.json"), slurp(d + "/b/summary.json"));
  const auto summary = nlohmann::json::parse(slurp(d + "/a/summary.json"));
  EXPECT_EQ(summary.at("frozen_checksum_before"), summary.at("frozen_checksum_after"));
  EXPECT_TRUE(fs::exists(d + "/a/model.ckpt"));
  EXPECT_TRUE(fs::exists(d + "/a/config.ini"));

  const auto e = run("eval --checkpoint " + d + "/a/model.ckpt --out " + d + "/eval");
  ASSERT_EQ(e.code, 0) << e.output;
  const auto rows = csv(slurp(d + "/eval/eval.csv"));
  ASSERT_EQ(rows.size(), 5u);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"example", "scored_tokens", "loss"}));

  const auto h = run("head-importance --checkpoint " + d + "/a/model.ckpt --out " + d + "/heads");
  ASSERT_EQ(h.code, 0) << h.output;
  EXPECT_EQ(csv(slurp(d + "/heads/head_importance.csv")).size(), 1u + 4 * 2);
  EXPECT_EQ(csv(slurp(d + "/heads/head_variance.csv")).size(), 1u + 4);
}

TEST(Cli, CheckpointConfigMismatchIsConfigError) {
  const auto d = dir("mismatch");
  const auto cfg = write_config(d, kTiny);
  ASSERT_EQ(run("train --config " + cfg + " --out " + d).code, 0);
  std::string text = kTiny;
  text.replace(text.find("d_model = 16"), 12, "d_model = 32");
  const auto other = (fs::path(d) / "other.ini").string();
  std::ofstream(other) << text;
  const auto r = run("eval --checkpoint " + d + "/model.ckpt --config " + other + " --out " + d);
  EXPECT_EQ(r.code, 2) << r.output;
  EXPECT_EQ(run("eval --checkpoint " + d + "/absent.ckpt --out " + d).code, 2);
}

TEST(Cli, ParamsOrderingAndZeroInserted) {
  const auto d = dir("params");
  auto r = run("params --out " + d);
  ASSERT_EQ(r.code, 0) << r.output;
  const auto rows = csv(slurp(d + "/params.csv"));
  ASSERT_EQ(rows.size(), 5u);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"method", "trainable", "total"}));
  std::map<std::string, long long> trainable;
  for (std::size_t i = 1; i < rows.size(); ++i) trainable[rows[i][0]] = std::stoll(rows[i][1]);
  EXPECT_LT(trainable["midus_hml"], trainable["midus_pkm"]);
  EXPECT_LT(trainable["midus_pkm"], trainable["midus_linear"]);
  EXPECT_LT(trainable["midus_linear"], trainable["dus_copy"]);

  const auto cfg = write_config(d, "[upscale]\ninserted = 0\n");
  r = run("params --config " + cfg + " --out " + d);
  ASSERT_EQ(r.code, 0) << r.output;
  for (const auto& row : csv(slurp(d + "/params.csv"))) {
    if (row[0] != "method") {
      EXPECT_EQ(row[1], "0") << row[0];
    }
  }
}

TEST(Cli, BenchTopkSweep) {
  const auto d = dir("topk");
  const auto r = run("bench-topk --max-tokens 64 --repeats 3 --out " + d);
  ASSERT_EQ(r.code, 0) << r.output;
  const auto rows = csv(slurp(d + "/bench_topk.csv"));
  ASSERT_EQ(rows[0], (std::vector<std::string>{"n", "k", "tokens", "two_stage_ns", "fused_ns",
                                               "equal"}));
  ASSERT_EQ(rows.size(), 8u);
  EXPECT_EQ(rows[1][2], "1");
  for (std::size_t i = 1; i < rows.size(); ++i) {
    EXPECT_EQ(rows[i][5], "true");
    if (i > 1) {
      EXPECT_GT(std::stoul(rows[i][2]), std::stoul(rows[i - 1][2]));
    }
  }
}

TEST(Cli, BenchPrefillCounts) {
  const auto d = dir("prefill");
  const auto r = run("bench-prefill --lengths 8,16,32 --repeats 2 --out " + d);
  ASSERT_EQ(r.code, 0) << r.output;
  const auto rows = csv(slurp(d + "/bench_prefill.csv"));
  ASSERT_EQ(rows[0], (std::vector<std::string>{"length", "block_kind", "forward_ns", "macs"}));
  std::map<std::string, std::map<std::size_t, unsigned long long>> macs;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    macs[rows[i][1]][std::stoul(rows[i][0])] = std::stoull(rows[i][3]);
  }
  ASSERT_EQ(macs.size(), 4u);
  for (std::size_t s : {8u, 16u, 32u}) {
    EXPECT_LT(macs["hml"][s], macs["transformer"][s]);
    EXPECT_LT(macs["hml_layer"][s], macs["ffn"][s]);
  }
  for (const char* kind : {"ffn", "hml_layer"}) {
    EXPECT_EQ(macs[kind][16], 2 * macs[kind][8]) << kind;
    EXPECT_EQ(macs[kind][32], 4 * macs[kind][8]) << kind;
  }
}

TEST(Cli, GradcheckPassesAndCorruptionFails) {
  const auto d = dir("gradcheck");
  const auto cfg = write_config(d, kTiny);
  auto r = run("gradcheck --config " + cfg + " --out " + d);
  EXPECT_EQ(r.code, 0) << r.output;
  const auto rows = csv(slurp(d + "/gradcheck.csv"));
  ASSERT_GT(rows.size(), 1u);
  EXPECT_EQ(rows[0][1], "checked");
  for (std::size_t i = 1; i < rows.size(); ++i) EXPECT_EQ(rows[i].back(), "pass") << rows[i][0];
  r = run("gradcheck --config " + cfg + " --corrupt hml/value_transform --out " + d);
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("hml/value_transform"), std::string::npos);
}

}  // namespace
