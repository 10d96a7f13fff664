#pragma once

#include <stdexcept>
#include <string>

namespace nres {

// Invalid configuration: bad field values, contradictory flags, unknown JSON
// keys. The CLI maps this family to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Shape mismatch between tensor operands; the message names both shapes.
class DimensionError : public std::runtime_error {
 public:
  explicit DimensionError(const std::string& what) : std::runtime_error(what) {}
};

// Out-of-range element or token access.
class IndexError : public std::runtime_error {
 public:
  explicit IndexError(const std::string& what) : std::runtime_error(what) {}
};

// Malformed on-disk artifact (checkpoint, metrics, grid); the message carries
// the byte offset or file:line that failed.
class FormatError : public std::runtime_error {
 public:
  explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

// Non-finite loss or gradient, or a numeric contract violation at runtime.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

// API misuse: a call violated an operation's stated precondition.
class ContractError : public std::runtime_error {
 public:
  explicit ContractError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace nres
