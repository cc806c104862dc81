#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ptcure {

// Malformed user input: CSV rows, config files, argument combinations.
class InputError : public std::runtime_error {
 public:
  explicit InputError(const std::string& what, std::size_t line = 0)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// A dataset failed validation before a computation that requires validity.
class InvalidDatasetError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Numerical failure inside an estimator (overflow, singular system, no root).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class OverflowError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class SingularMatrixError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class RootBracketError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

}  // namespace ptcure
