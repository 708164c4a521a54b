#pragma once

#include <stdexcept>
#include <string>

namespace msafeb {

// Error hierarchy. The CLI maps each family onto a distinct exit code.

/// Invalid shapes, arguments, or configurations passed by the caller.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ShapeError : public UsageError {
 public:
  using UsageError::UsageError;
};

class ConfigError : public UsageError {
 public:
  using UsageError::UsageError;
};

/// Malformed files, undecodable images, I/O failures.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite values produced in checked mode.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace msafeb
