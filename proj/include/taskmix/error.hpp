// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace taskmix {

/// Invalid hyperparameter, geometry or config key. CLI exit code 2.
class ConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent dataset content. CLI exit code 3.
class DataError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class NumericError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// API misuse (empty split, missing trace, ...).
class UsageError : public std::logic_error {
public:
  using std::logic_error::logic_error;
};

/// Non-finite loss during training. CLI exit code 4.
class TrainingError : public std::runtime_error {
public:
  TrainingError(std::size_t step, const std::string &what)
      : std::runtime_error("diverged at step " + std::to_string(step) + ": " +
                           what),
        step_(step) {}

  std::size_t step() const noexcept { return step_; }

private:
  std::size_t step_;
};

} // namespace taskmix
