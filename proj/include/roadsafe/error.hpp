#pragma once

#include <stdexcept>
#include <string>

namespace roadsafe {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor extents do not line up for the requested op.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A NaN or Inf appeared in a tensor, or a finite-difference probe diverged.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed or missing input data (CSV, manifests, images, checkpoints).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration or argument outside its documented domain.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// The static-maps key environment variable is not set.
class KeyMissing : public Error {
 public:
  using Error::Error;
};

}  // namespace roadsafe
