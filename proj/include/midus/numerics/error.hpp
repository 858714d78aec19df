// Copyright 2026 The MIDUS Authors.
// SPDX-License-Identifier: Apache-2.0

#ifndef MIDUS_NUMERICS_ERROR_HPP_
#define MIDUS_NUMERICS_ERROR_HPP_

#include <stdexcept>
#include <string>

namespace midus {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf reached a public boundary, or training diverged.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value or combination of values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

namespace detail {

inline void require_shape(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

}  // namespace detail
}  // namespace midus

#endif  // MIDUS_NUMERICS_ERROR_HPP_
