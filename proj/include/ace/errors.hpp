#pragma once

#include <stdexcept>
#include <string>

namespace ace {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Invalid model, solver or run configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// API misuse, e.g. backward on a detached tensor or empty metric input.
class UsageError : public Error {
 public:
  using Error::Error;
};

// Invalid data content (labels out of range, too few observations).
class DataError : public Error {
 public:
  using Error::Error;
};

// Malformed file contents.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Adaptive controller proposed a step below SolverConfig::min_step.
class StepUnderflow : public Error {
 public:
  StepUnderflow(double t, double step, const std::string& phase = {});
  double t() const { return t_; }
  double step() const { return step_; }

 private:
  double t_;
  double step_;
};

// SolverConfig::max_steps exhausted.
class BudgetError : public Error {
 public:
  BudgetError(double t, long steps, const std::string& phase = {});
  double t() const { return t_; }

 private:
  double t_;
};

// Problem too large for an O(P) oracle.
class SizeError : public Error {
 public:
  using Error::Error;
};

// Time grids of two trajectories do not line up.
class AlignmentError : public Error {
 public:
  using Error::Error;
};

// Training stopped: a solver or numerical failure, with the epoch and phase it hit.
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace ace
