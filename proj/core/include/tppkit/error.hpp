#pragma once

#include <stdexcept>
#include <string>

namespace tppkit {

// Base for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shape or wiring mismatch.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Malformed or inconsistent input data (files, streams, specs, flags).
class DataError : public Error {
 public:
  using Error::Error;
};

// NaN, Inf, or an out-of-domain value met during computation.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace tppkit
