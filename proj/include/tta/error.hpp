#pragma once

#include <stdexcept>
#include <string>

namespace tta {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or volume extents that do not fit the operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Operation called in the wrong order, e.g. backward before forward.
class StateError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration or argument value (negative lambda, C < 2, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf detected where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

// File-format errors. Each failure mode gets its own type so callers can
// tell a wrong file apart from a damaged one.
class FormatError : public Error {
 public:
  using Error::Error;
};

class BadMagicError : public FormatError {
 public:
  using FormatError::FormatError;
};

class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

class TruncatedError : public FormatError {
 public:
  using FormatError::FormatError;
};

class UnknownLayerError : public FormatError {
 public:
  using FormatError::FormatError;
};

class CorruptHeaderError : public FormatError {
 public:
  using FormatError::FormatError;
};

}  // namespace tta
