#pragma once

#include <stdexcept>
#include <string>

namespace nlosid {

/// Process exit codes shared by every CLI subcommand.
enum class ExitCode : int {
  ok = 0,
  usage = 1,
  data_integrity = 2,
  acceptance_failure = 3,
};

/// Bad configuration or arguments (exit code 1).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Corrupt, truncated or inconsistent data on disk or in memory (exit code 2).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor or layer shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Training produced a non-finite loss.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace nlosid
