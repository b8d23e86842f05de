#pragma once

#include <stdexcept>
#include <string>

namespace arpl {

// Config file or schema violation. CLI exit code 1.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Dynamics integration blow-up or singular mass matrix.
class DynamicsError : public std::runtime_error {
 public:
  explicit DynamicsError(const std::string& what) : std::runtime_error(what) {}
};

// Non-finite loss during policy training. CLI exit code 2.
class TrainingError : public std::runtime_error {
 public:
  explicit TrainingError(const std::string& what) : std::runtime_error(what) {}
};

// Checkpoint/dataset does not match the run config. CLI exit code 3.
class IncompatibilityError : public std::runtime_error {
 public:
  explicit IncompatibilityError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace arpl
