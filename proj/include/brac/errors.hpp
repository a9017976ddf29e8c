#pragma once

#include <stdexcept>
#include <string>

namespace brac {

/// Invalid configuration or shape mismatch detected before any math runs.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A documented precondition was violated by the caller.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Numerical failure during training (non-finite values). The harness turns
/// these into score-0 records instead of aborting a grid.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or truncated file on disk.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace brac
