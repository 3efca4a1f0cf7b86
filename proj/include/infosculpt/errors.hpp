#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace infosculpt {

/// Operand shapes do not satisfy an operator's contract.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Input outside an operator's mathematical domain (log of a nonpositive
/// value, softmax over an all -inf row, zero-norm normalization, ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// API misuse that is neither a shape nor a domain problem.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Invalid configuration value.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed input file. `row()` is the 1-based line number, 0 if unknown.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t row = 0)
      : std::runtime_error(row == 0 ? what : "row " + std::to_string(row) + ": " + what),
        row_(row) {}
  std::size_t row() const noexcept { return row_; }

 private:
  std::size_t row_;
};

/// A training step produced a NaN or Inf loss component.
class NonFiniteLoss : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace infosculpt
