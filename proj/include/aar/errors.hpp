#pragma once

#include <stdexcept>
#include <string>

namespace aar {

/// Violated precondition of an operation (shape mismatch, bad index, ...).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Invalid or inconsistent configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Checkpoint payload failed a length or checksum test.
class IntegrityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Checkpoint written by another format version or config.
class IncompatibleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite loss during training.
class NumericalAbort : public std::runtime_error {
 public:
  NumericalAbort(long step, std::string component)
      : std::runtime_error("non-finite loss at step " + std::to_string(step) + " in " +
                           component),
        step_(step),
        component_(std::move(component)) {}

  long step() const noexcept { return step_; }
  const std::string& component() const noexcept { return component_; }

 private:
  long step_;
  std::string component_;
};

}  // namespace aar
