#pragma once

#include <stdexcept>
#include <string>

namespace hasseg {

// Exception hierarchy. The CLI maps each family onto a distinct exit status.

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape or contract violation in a tensor / volume operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf encountered where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Argument is well-formed but semantically invalid (empty set, bad label value, ...).
class ValueError : public Error {
 public:
  using Error::Error;
};

}  // namespace hasseg
