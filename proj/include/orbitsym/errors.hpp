#pragma once

#include <limits>
#include <stdexcept>
#include <string>

namespace orbitsym {

/// Operand shapes do not fit the operation.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Matrix is singular or its condition estimate exceeds the configured ceiling.
class InvertibilityError : public std::runtime_error {
 public:
  InvertibilityError(const std::string& what, double condition)
      : std::runtime_error(what), condition_(condition) {}
  double condition() const noexcept { return condition_; }

 private:
  double condition_ = std::numeric_limits<double>::infinity();
};

/// Reverse pass requested through a point where the derivative does not exist.
class GradientError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input lies outside the domain on which an invariant is defined.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// A forward or backward pass produced a non-finite value.
class NumericError : public std::runtime_error {
 public:
  NumericError(const std::string& stage, const std::string& what)
      : std::runtime_error(stage + ": " + what), stage_(stage) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

class SamplingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed file contents (bad magic, truncated payload, version mismatch).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad configuration key or value, or bad command-line usage.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace orbitsym
