#pragma once

#include <stdexcept>
#include <string>

namespace hdsa {

/// Input outside the mathematical domain of an operation (non-positive
/// coefficient, point outside the unit square, size mismatch).
class DomainError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A linear or nonlinear solver failed to produce a usable result.
class SolverError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Experiment configuration rejected during validation.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A precondition of the sensitivity analysis (stationarity, positive
/// definite Hessian) does not hold at the supplied point.
class ValidityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace hdsa
