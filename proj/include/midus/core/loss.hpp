// Copyright 2026 The MIDUS Authors.
// SPDX-License-Identifier: Apache-2.0

#ifndef MIDUS_CORE_LOSS_HPP_
#define MIDUS_CORE_LOSS_HPP_

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "midus/numerics/ops.hpp"

namespace midus {

using Token = std::uint32_t;

/// Mean next-token negative log-likelihood over positions whose mask entry
/// is set (all positions when `mask` is empty). Optionally writes
/// dLoss/dLogits into `grad`.
template <Real T>
T lm_loss(const Tensor<T>& logits, std::span<const Token> targets,
          std::span<const std::uint8_t> mask = {}, Tensor<T>* grad = nullptr) {
  detail::require_shape(logits.rank() == 2 && logits.rows() == targets.size(),
                        "lm_loss: logits " + shape_string(logits.shape()) +
                            " vs " + std::to_string(targets.size()) + " targets");
  detail::require_shape(mask.empty() || mask.size() == targets.size(),
                        "lm_loss: mask length");
  const std::size_t s = logits.rows(), vocab = logits.cols();
  std::size_t counted = 0;
  for (std::size_t r = 0; r < s; ++r) {
    if (targets[r] >= vocab) {
      throw IndexError("lm_loss: target " + std::to_string(targets[r]) +
                       " outside vocab " + std::to_string(vocab));
    }
    if (mask.empty() || mask[r]) ++counted;
  }
  if (counted == 0) throw ShapeError("lm_loss: no positions selected");
  if (grad) *grad = Tensor<T>(logits.shape());
  const T inv_count = T{1} / static_cast<T>(counted);
  T total{0};
  std::vector<T> probs(vocab);
  for (std::size_t r = 0; r < s; ++r) {
    if (!mask.empty() && !mask[r]) continue;
    const auto row = logits.row(r);
    softmax_into<T>(row, std::span<T>(probs));
    const T peak = *std::max_element(row.begin(), row.end());
    T sum{0};
    for (T v : row) sum += std::exp(v - peak);
    total += (peak + std::log(sum)) - row[targets[r]];
    if (grad) {
      auto g = grad->row(r);
      for (std::size_t c = 0; c < vocab; ++c) g[c] = probs[c] * inv_count;
      g[targets[r]] -= inv_count;
    }
  }
  const T loss = total * inv_count;
  if (!std::isfinite(loss)) throw NumericError("lm_loss: non-finite loss");
  return loss;
}

}  // namespace midus

#endif  // MIDUS_CORE_LOSS_HPP_
