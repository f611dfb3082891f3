#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cmdf {

/// Precondition or invariant violated by caller-supplied data.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Operand shapes do not agree for an operator.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// On-disk artifact is missing, truncated or malformed.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A loss or gradient became non-finite.
class NumericError : public std::runtime_error {
 public:
  NumericError(const std::string& what, std::size_t step)
      : std::runtime_error(what), step_(step) {}
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}

  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_ = 0;
};

}  // namespace cmdf
