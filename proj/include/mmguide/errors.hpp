// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mmguide {

class InvalidArgument : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Sign-aligned quaternion mean collapsed to (near) zero norm.
class DegenerateMean : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Covariance still not positive definite after the jitter retries.
class DegenerateCovariance : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Malformed text input; carries the 1-based line number when known.
class ParseError : public std::runtime_error {
public:
  ParseError(const std::string &what, std::size_t line = 0)
      : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what
                                : what),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }

private:
  std::size_t line_;
};

/// Well-formed input that violates a data invariant (unit norm, ranges).
class ValidationError : public std::runtime_error {
public:
  ValidationError(const std::string &what, std::size_t line = 0)
      : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what
                                : what),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }

private:
  std::size_t line_;
};

class NonFiniteGradient : public std::runtime_error {
public:
  explicit NonFiniteGradient(const std::string &tensor)
      : std::runtime_error("non-finite gradient in tensor '" + tensor + "'"),
        tensor_(tensor) {}
  const std::string &tensor() const noexcept { return tensor_; }

private:
  std::string tensor_;
};

class NonFiniteLoss : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Checkpoint contents do not fit the model configuration.
class CheckpointMismatch : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

} // namespace mmguide
