// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace egfuse {

/// Base class for all errors raised by this library.
class Error : public std::runtime_error {
public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Tensor extents incompatible with the requested operation.
class ShapeError : public Error {
public:
  using Error::Error;
};

/// A computation produced or would consume an invalid number (NaN/Inf,
/// log of a non-positive value, unnormalized probabilities).
class NumericError : public Error {
public:
  using Error::Error;
};

/// An object was driven through an invalid state transition.
class StateError : public Error {
public:
  using Error::Error;
};

/// Invalid or inconsistent configuration.
class ConfigError : public Error {
public:
  using Error::Error;
};

/// Malformed on-disk data (bad magic, truncation, length mismatch).
class FormatError : public Error {
public:
  using Error::Error;
};

/// Well-formed file whose content violates a semantic contract
/// (e.g. a class id outside the configured range).
class DataError : public Error {
public:
  using Error::Error;
};

/// Pseudo-labeling produced no usable supervision.
class CoverageError : public Error {
public:
  using Error::Error;
};

}  // namespace egfuse
