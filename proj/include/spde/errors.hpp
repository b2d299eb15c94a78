#pragma once

#include <stdexcept>
#include <string>

namespace spde {

/// Invalid argument to a library call (bad index, incompatible shapes, ...).
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Non-finite value produced while evaluating a nonlinearity or quadrature.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Configuration violates a documented constraint (step restriction, unknown key, ...).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The implicit step could not be solved to tolerance.
class SolverError : public std::runtime_error {
 public:
  SolverError(const std::string& what, double last_residual, int iterations)
      : std::runtime_error(what), last_residual_(last_residual), iterations_(iterations) {}

  double last_residual() const noexcept { return last_residual_; }
  int iterations() const noexcept { return iterations_; }

 private:
  double last_residual_;
  int iterations_;
};

/// A Monte Carlo study could not be completed (too many failed samples).
class StudyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace spde
