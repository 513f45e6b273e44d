#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ace/tape.hpp"

namespace ace {

enum class Method { euler, rk4, dopri5 };

Method parse_method(const std::string& name);
std::string method_name(Method m);

struct SolverConfig {
  Method method = Method::dopri5;
  /// Fixed-step methods only.
  double step_size = 0.05;
  double rtol = 1e-6;
  double atol = 1e-6;
  /// Bounds accepted + rejected steps.
  long max_steps = 100000;
  double min_step = 1e-10;
  /// Defaults to |t1 - t0| / 100.
  std::optional<double> initial_step;

  void validate() const;
};

/// dy/dt = f(t, y), written into `dydt`.
using Rhs = std::function<void(double t, std::span<const double> y, std::span<double> dydt)>;

struct SolverStats {
  long rhs_evals = 0;
  long accepted = 0;
  long rejected = 0;
};

struct Trajectory {
  std::vector<double> times;
  std::vector<std::vector<double>> states;
};

struct Solution {
  std::vector<double> state;
  /// Filled only when integrate() is asked to record.
  Trajectory trajectory;
  SolverStats stats;
};

std::vector<double> euler_step(const Rhs& f, std::span<const double> y, double t, double s);
std::vector<double> rk4_step(const Rhs& f, std::span<const double> y, double t, double s);

struct EmbeddedStep {
  std::vector<double> state;  // fifth-order solution
  std::vector<double> error;  // difference to the embedded fourth-order solution
};
EmbeddedStep dopri5_step(const Rhs& f, std::span<const double> y, double t, double s);

/// rms_i( err_i / (atol + rtol * max(|y0_i|, |y1_i|)) )
double error_norm(std::span<const double> err, std::span<const double> y0, std::span<const double> y1, double rtol,
                  double atol);

/// Advances y0 from t0 to t1 (t1 < t0 integrates backwards). `phase` tags solver errors.
Solution integrate(const Rhs& f, std::vector<double> y0, double t0, double t1, const SolverConfig& cfg,
                   bool record = false, const std::string& phase = {});

/// Right-hand side expressed in tape ops, for differentiating through the solver.
using TapeRhs = std::function<Var(double t, Var y)>;

/// Fixed-step euler/rk4 integration recorded on y0's tape.
Var integrate_on_tape(const TapeRhs& f, Var y0, double t0, double t1, Method method, double step_size);

/// ceil(|t1 - t0| / s) with a guard against round-off just above an integer.
long fixed_step_count(double t0, double t1, double s);

}  // namespace ace
