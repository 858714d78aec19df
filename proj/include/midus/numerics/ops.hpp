// Copyright 2026 The MIDUS Authors.
// SPDX-License-Identifier: Apache-2.0

#ifndef MIDUS_NUMERICS_OPS_HPP_
#define MIDUS_NUMERICS_OPS_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "midus/numerics/tensor.hpp"

namespace midus {

// All kernels accumulate dot products left to right over the shared axis so
// results are bit-reproducible for a given precision.

/// a[m x k] * b[k x n].
template <Real T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_shape(a.rank() == 2 && b.rank() == 2 && a.cols() == b.rows(),
                        "matmul " + shape_string(a.shape()) + " * " +
                            shape_string(b.shape()));
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor<T> out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    T* o = out.data().data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      const T* br = b.data().data() + p * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += av * br[j];
    }
  }
  return out;
}

/// a[m x k] * b[n x k]^T.
template <Real T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_shape(a.rank() == 2 && b.rank() == 2 && a.cols() == b.cols(),
                        "matmul_nt " + shape_string(a.shape()) + " * " +
                            shape_string(b.shape()) + "^T");
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  Tensor<T> out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    const T* ar = a.data().data() + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const T* br = b.data().data() + j * k;
      T acc{0};
      for (std::size_t p = 0; p < k; ++p) acc += ar[p] * br[p];
      out[i * n + j] = acc;
    }
  }
  return out;
}

/// a[k x m]^T * b[k x n].
template <Real T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_shape(a.rank() == 2 && b.rank() == 2 && a.rows() == b.rows(),
                        "matmul_tn " + shape_string(a.shape()) + "^T * " +
                            shape_string(b.shape()));
  const std::size_t k = a.rows(), m = a.cols(), n = b.cols();
  Tensor<T> out({m, n});
  for (std::size_t p = 0; p < k; ++p) {
    const T* ar = a.data().data() + p * m;
    const T* br = b.data().data() + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T av = ar[i];
      T* o = out.data().data() + i * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += av * br[j];
    }
  }
  return out;
}

template <Real T>
Tensor<T> transpose(const Tensor<T>& a) {
  detail::require_shape(a.rank() == 2, "transpose expects a matrix");
  Tensor<T> out({a.cols(), a.rows()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out.at(j, i) = a.at(i, j);
  return out;
}

template <Real T>
void add_inplace(Tensor<T>& dst, const Tensor<T>& src) {
  detail::require_shape(dst.shape() == src.shape(),
                        "add " + shape_string(dst.shape()) + " + " +
                            shape_string(src.shape()));
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

template <Real T>
Tensor<T> add(Tensor<T> a, const Tensor<T>& b) {
  add_inplace(a, b);
  return a;
}

template <Real T>
T dot(std::span<const T> a, std::span<const T> b) {
  T acc{0};
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

/// Numerically stable softmax of one vector, written into `out`.
template <Real T>
void softmax_into(std::span<const T> scores, std::span<T> out) {
  if (scores.empty()) throw ShapeError("softmax over an empty axis");
  const T peak = *std::max_element(scores.begin(), scores.end());
  T total{0};
  for (std::size_t i = 0; i < scores.size(); ++i) {
    out[i] = std::exp(scores[i] - peak);
    total += out[i];
  }
  for (auto& v : out) v /= total;
}

/// Softmax over the last axis.
template <Real T>
Tensor<T> softmax(const Tensor<T>& scores) {
  if (scores.rank() == 0 || scores.shape().back() == 0) {
    throw ShapeError("softmax over an empty axis");
  }
  Tensor<T> out(scores.shape());
  const std::size_t width = scores.shape().back();
  for (std::size_t r = 0; r < scores.size() / width; ++r) {
    softmax_into<T>(scores.row(r), out.row(r));
  }
  ensure_finite(out, "softmax");
  return out;
}

/// Row-wise root-mean-square normalization scaled by `gain`.
template <Real T>
Tensor<T> rms_norm(const Tensor<T>& x, const Tensor<T>& gain, T eps) {
  detail::require_shape(x.rank() == 2 && gain.size() == x.cols(),
                        "rms_norm " + shape_string(x.shape()) + " gain " +
                            shape_string(gain.shape()));
  if (!(eps > T{0})) throw ShapeError("rms_norm eps must be positive");
  const std::size_t d = x.cols();
  Tensor<T> out(x.shape());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto xr = x.row(r);
    T ms{0};
    for (T v : xr) ms += v * v;
    ms /= static_cast<T>(d);
    const T inv = T{1} / std::sqrt(ms + eps);
    auto o = out.row(r);
    for (std::size_t c = 0; c < d; ++c) o[c] = xr[c] * inv * gain[c];
  }
  ensure_finite(out, "rms_norm");
  return out;
}

template <Real T>
struct Scored {
  std::size_t index;
  T score;
  friend bool operator==(const Scored&, const Scored&) = default;
};

/// Strict ordering used by every selection in the library: higher score
/// first, lower index first on ties.
template <Real T>
constexpr bool ranks_before(const Scored<T>& a, const Scored<T>& b) noexcept {
  return a.score > b.score || (a.score == b.score && a.index < b.index);
}

/// The `k` largest entries of `scores`, sorted by ranks_before.
template <Real T>
std::vector<Scored<T>> topk(std::span<const T> scores, std::size_t k) {
  if (k < 1 || k > scores.size()) {
    throw ShapeError("topk: k=" + std::to_string(k) + " outside [1, " +
                     std::to_string(scores.size()) + "]");
  }
  std::vector<Scored<T>> items(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) items[i] = {i, scores[i]};
  std::partial_sort(items.begin(), items.begin() + static_cast<long>(k),
                    items.end(), ranks_before<T>);
  items.resize(k);
  return items;
}

template <Real T>
std::vector<Scored<T>> topk(const std::vector<T>& scores, std::size_t k) {
  return topk(std::span<const T>(scores), k);
}

}  // namespace midus

#endif  // MIDUS_NUMERICS_OPS_HPP_
