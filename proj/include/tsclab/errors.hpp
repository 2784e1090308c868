#pragma once

#include <stdexcept>
#include <string>

namespace tsclab {

/// Invalid experiment or model configuration (bad dimensions, densities, rates).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// An operation was called with arguments that violate its contract.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Argument outside the mathematical domain of a function.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Malformed input file.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Supervised training did not reach its targets.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Policy parameters blew up during REINFORCE-TD.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(long iteration, const std::string& what)
      : std::runtime_error(what), iteration_(iteration) {}
  long iteration() const noexcept { return iteration_; }

 private:
  long iteration_;
};

}  // namespace tsclab
