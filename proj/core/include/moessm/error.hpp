#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace moessm {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shapes disagree, a value is out of range, or an input is non-finite.
class InvalidInput : public Error {
 public:
  using Error::Error;
};

/// A check was invoked on an instance that does not meet its hypotheses.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// A non-finite value appeared while evaluating a recurrence.
class NumericError : public Error {
 public:
  NumericError(const std::string& what, std::size_t step)
      : Error(what + " (step " + std::to_string(step) + ")"), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

/// exp() overflowed during discretization.
class OverflowError : public Error {
 public:
  OverflowError(const std::string& what, std::size_t index)
      : Error(what + " (index " + std::to_string(index) + ")"), index_(index) {}
  std::size_t index() const noexcept { return index_; }

 private:
  std::size_t index_;
};

/// An iterative method hit its iteration cap.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, double last_estimate)
      : Error(what), last_estimate_(last_estimate) {}
  double last_estimate() const noexcept { return last_estimate_; }

 private:
  double last_estimate_;
};

/// Problem too large for a materializing or allocating path.
class SizeError : public Error {
 public:
  using Error::Error;
};

/// Operation does not support the given transition structure.
class UnsupportedTransition : public Error {
 public:
  using Error::Error;
};

}  // namespace moessm
