// Copyright 2026 The MIDUS Authors.
// SPDX-License-Identifier: Apache-2.0

#ifndef MIDUS_TRAIN_CORPUS_HPP_
#define MIDUS_TRAIN_CORPUS_HPP_

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "midus/core/loss.hpp"
#include "midus/numerics/error.hpp"
#include "midus/numerics/rng.hpp"

namespace midus {

/// One next-token training example. `mask[i]` selects targets[i] for the loss.
struct Example {
  std::vector<Token> inputs;
  std::vector<Token> targets;
  std::vector<std::uint8_t> mask;
};

class Corpus {
 public:
  virtual ~Corpus() = default;
  virtual std::size_t vocab() const = 0;
  virtual Example sample(Rng& rng) const = 0;
  /// Fixed held-out examples, identical on every call.
  virtual const std::vector<Example>& eval_set() const = 0;
};

/// Splits a token sequence into inputs/targets with every target counted.
inline Example shift_sequence(const std::vector<Token>& seq) {
  if (seq.size() < 2) throw ShapeError("example needs at least two tokens");
  Example e;
  e.inputs.assign(seq.begin(), seq.end() - 1);
  e.targets.assign(seq.begin() + 1, seq.end());
  e.mask.assign(e.targets.size(), 1);
  return e;
}

/// Byte-level text: random windows of `window + 1` bytes.
class TextCorpus final : public Corpus {
 public:
  TextCorpus(std::vector<std::uint8_t> bytes, std::size_t window, std::size_t eval_examples,
             std::uint64_t seed)
      : bytes_(std::move(bytes)), window_(window) {
    if (window_ < 1) throw ConfigError("data: seq_len must be >= 1");
    if (bytes_.size() < window_ + 1) {
      throw ConfigError("data: corpus has " + std::to_string(bytes_.size()) +
                        " bytes, fewer than seq_len + 1 = " + std::to_string(window_ + 1));
    }
    Rng rng = Rng(seed).fork(0xE7A1);
    for (std::size_t i = 0; i < eval_examples; ++i) eval_.push_back(sample(rng));
  }

  static TextCorpus from_file(const std::string& path, std::size_t window,
                              std::size_t eval_examples, std::uint64_t seed) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("data.corpus: cannot open '" + path + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return TextCorpus(std::move(bytes), window, eval_examples, seed);
  }

  std::size_t vocab() const override { return 256; }

  Example sample(Rng& rng) const override {
    const std::size_t start = rng.below(bytes_.size() - window_);
    std::vector<Token> seq(bytes_.begin() + static_cast<std::ptrdiff_t>(start),
                           bytes_.begin() + static_cast<std::ptrdiff_t>(start + window_ + 1));
    return shift_sequence(seq);
  }

  const std::vector<Example>& eval_set() const override { return eval_; }

 private:
  std::vector<std::uint8_t> bytes_;
  std::size_t window_;
  std::vector<Example> eval_;
};

/// Key -> value recall. Keys are tokens [0, keys), values [keys, 2*keys),
/// joined by a fixed random bijection. A sequence is `pairs` (key, value)
/// pairs with distinct keys; only the value targets are scored.
class RecallCorpus final : public Corpus {
 public:
  RecallCorpus(std::size_t keys, std::size_t pairs, std::size_t eval_examples,
               std::uint64_t seed)
      : keys_(keys), pairs_(pairs) {
    if (keys_ == 0 || pairs_ == 0 || pairs_ > keys_) {
      throw ConfigError("data: recall corpus needs 1 <= pairs <= keys");
    }
    Rng map_rng = Rng(seed).fork(0x3A9);
    mapping_.resize(keys_);
    std::iota(mapping_.begin(), mapping_.end(), static_cast<Token>(keys_));
    for (std::size_t i = keys_; i-- > 1;) std::swap(mapping_[i], mapping_[map_rng.below(i + 1)]);
    Rng eval_rng = Rng(seed).fork(0xE7A1);
    for (std::size_t i = 0; i < eval_examples; ++i) eval_.push_back(sample(eval_rng));
  }

  std::size_t vocab() const override { return 2 * keys_; }
  Token value_of(Token key) const { return mapping_.at(key); }

  Example sample(Rng& rng) const override {
    std::vector<Token> chosen;
    while (chosen.size() < pairs_) {
      const Token k = static_cast<Token>(rng.below(keys_));
      if (std::find(chosen.begin(), chosen.end(), k) == chosen.end()) chosen.push_back(k);
    }
    std::vector<Token> seq;
    for (Token k : chosen) {
      seq.push_back(k);
      seq.push_back(mapping_[k]);
    }
    Example e = shift_sequence(seq);
    for (std::size_t i = 0; i < e.inputs.size(); ++i) e.mask[i] = e.inputs[i] < keys_;
    return e;
  }

  const std::vector<Example>& eval_set() const override { return eval_; }

 private:
  std::size_t keys_;
  std::size_t pairs_;
  std::vector<Token> mapping_;
  std::vector<Example> eval_;
};

}  // namespace midus

#endif  // MIDUS_TRAIN_CORPUS_HPP_
