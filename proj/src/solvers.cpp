#include "ace/solvers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "ace/errors.hpp"
#include "ace/ops.hpp"

namespace ace {

namespace {

// Dormand-Prince 5(4) tableau.
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                 a65 = -5103.0 / 18656;
constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784, b6 = 11.0 / 84;
// b - b_hat, where b_hat are the embedded fourth-order weights.
constexpr double e1 = 35.0 / 384 - 5179.0 / 57600, e3 = 500.0 / 1113 - 7571.0 / 16695,
                 e4 = 125.0 / 192 - 393.0 / 640, e5 = -2187.0 / 6784 + 92097.0 / 339200,
                 e6 = 11.0 / 84 - 187.0 / 2100, e7 = -1.0 / 40;

constexpr double kSafety = 0.9;
constexpr double kMinFactor = 0.2;
constexpr double kMaxFactor = 5.0;

enum class Finite { ok, inf };

class Evaluator {
 public:
  Evaluator(const Rhs& f, std::size_t n, SolverStats& stats, std::string phase)
      : f_(f), n_(n), stats_(stats), phase_(std::move(phase)) {}

  Finite operator()(double t, std::span<const double> y, std::span<double> out) {
    f_(t, y, out);
    ++stats_.rhs_evals;
    Finite status = Finite::ok;
    for (double v : out) {
      if (std::isnan(v)) {
        std::ostringstream os;
        os.precision(17);
        os << (phase_.empty() ? "" : "[" + phase_ + "] ") << "NaN in right-hand side at t=" << t;
        throw NumericError(os.str());
      }
      if (std::isinf(v)) status = Finite::inf;
    }
    return status;
  }

  std::size_t size() const { return n_; }

 private:
  const Rhs& f_;
  std::size_t n_;
  SolverStats& stats_;
  std::string phase_;
};

void axpy_into(std::span<double> out, std::span<const double> y, double h,
               std::initializer_list<std::pair<double, const std::vector<double>*>> terms) {
  for (std::size_t i = 0; i < out.size(); ++i) {
    double acc = 0.0;
    for (const auto& [coef, k] : terms) acc += coef * (*k)[i];
    out[i] = y[i] + h * acc;
  }
}

struct DopriWork {
  explicit DopriWork(std::size_t n) : k1(n), k2(n), k3(n), k4(n), k5(n), k6(n), k7(n), tmp(n), y5(n), err(n) {}
  std::vector<double> k1, k2, k3, k4, k5, k6, k7, tmp, y5, err;
};

// Stages 2..7 given k1 already evaluated at (t, y). Returns whether every stage stayed finite.
bool dopri5_stages(Evaluator& eval, std::span<const double> y, double t, double h, DopriWork& w) {
  bool finite = true;
  auto stage = [&](double c, std::vector<double>& k) {
    finite = eval(t + c * h, w.tmp, k) == Finite::ok && finite;
  };
  axpy_into(w.tmp, y, h, {{a21, &w.k1}});
  stage(c2, w.k2);
  axpy_into(w.tmp, y, h, {{a31, &w.k1}, {a32, &w.k2}});
  stage(c3, w.k3);
  axpy_into(w.tmp, y, h, {{a41, &w.k1}, {a42, &w.k2}, {a43, &w.k3}});
  stage(c4, w.k4);
  axpy_into(w.tmp, y, h, {{a51, &w.k1}, {a52, &w.k2}, {a53, &w.k3}, {a54, &w.k4}});
  stage(c5, w.k5);
  axpy_into(w.tmp, y, h, {{a61, &w.k1}, {a62, &w.k2}, {a63, &w.k3}, {a64, &w.k4}, {a65, &w.k5}});
  stage(1.0, w.k6);
  axpy_into(w.y5, y, h, {{b1, &w.k1}, {b3, &w.k3}, {b4, &w.k4}, {b5, &w.k5}, {b6, &w.k6}});
  finite = eval(t + h, w.y5, w.k7) == Finite::ok && finite;
  for (std::size_t i = 0; i < y.size(); ++i) {
    w.err[i] = h * (e1 * w.k1[i] + e3 * w.k3[i] + e4 * w.k4[i] + e5 * w.k5[i] + e6 * w.k6[i] + e7 * w.k7[i]);
  }
  return finite;
}

void require_positive_step(double s) {
  if (!(s > 0.0)) throw ConfigError("step size must be positive");
}

}  // namespace

Method parse_method(const std::string& name) {
  if (name == "euler") return Method::euler;
  if (name == "rk4") return Method::rk4;
  if (name == "dopri5") return Method::dopri5;
  throw ConfigError("unknown solver method '" + name + "' (expected euler, rk4 or dopri5)");
}

std::string method_name(Method m) {
  switch (m) {
    case Method::euler: return "euler";
    case Method::rk4: return "rk4";
    case Method::dopri5: return "dopri5";
  }
  return "?";
}

void SolverConfig::validate() const {
  if (!(step_size > 0.0)) throw ConfigError("solver.step_size must be > 0");
  if (!(rtol > 0.0 && rtol < 1.0)) throw ConfigError("solver.rtol must lie in (0, 1)");
  if (!(atol > 0.0 && atol < 1.0)) throw ConfigError("solver.atol must lie in (0, 1)");
  if (max_steps <= 0) throw ConfigError("solver.max_steps must be positive");
  if (!(min_step > 0.0)) throw ConfigError("solver.min_step must be > 0");
  if (initial_step && !(*initial_step > min_step)) {
    throw ConfigError("solver.initial_step must exceed solver.min_step");
  }
}

long fixed_step_count(double t0, double t1, double s) {
  const double ratio = std::abs(t1 - t0) / s;
  return std::max(1L, static_cast<long>(std::ceil(ratio - 1e-9 * std::max(1.0, ratio))));
}

std::vector<double> euler_step(const Rhs& f, std::span<const double> y, double t, double s) {
  require_positive_step(s);
  SolverStats stats;
  Evaluator eval(f, y.size(), stats, {});
  std::vector<double> k(y.size()), out(y.size());
  eval(t, y, k);
  for (std::size_t i = 0; i < y.size(); ++i) out[i] = y[i] + s * k[i];
  return out;
}

namespace {

// Signed-step RK4 used by both rk4_step and integrate().
void rk4_advance(Evaluator& eval, std::span<double> y, double t, double h, std::vector<double>& k1,
                 std::vector<double>& k2, std::vector<double>& k3, std::vector<double>& k4,
                 std::vector<double>& tmp) {
  eval(t, y, k1);
  for (std::size_t i = 0; i < y.size(); ++i) tmp[i] = y[i] + 0.5 * h * k1[i];
  eval(t + 0.5 * h, tmp, k2);
  for (std::size_t i = 0; i < y.size(); ++i) tmp[i] = y[i] + 0.5 * h * k2[i];
  eval(t + 0.5 * h, tmp, k3);
  for (std::size_t i = 0; i < y.size(); ++i) tmp[i] = y[i] + h * k3[i];
  eval(t + h, tmp, k4);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
}

}  // namespace

std::vector<double> rk4_step(const Rhs& f, std::span<const double> y, double t, double s) {
  require_positive_step(s);
  SolverStats stats;
  Evaluator eval(f, y.size(), stats, {});
  const std::size_t n = y.size();
  std::vector<double> out(y.begin(), y.end()), k1(n), k2(n), k3(n), k4(n), tmp(n);
  rk4_advance(eval, out, t, s, k1, k2, k3, k4, tmp);
  return out;
}

EmbeddedStep dopri5_step(const Rhs& f, std::span<const double> y, double t, double s) {
  require_positive_step(s);
  SolverStats stats;
  Evaluator eval(f, y.size(), stats, {});
  DopriWork w(y.size());
  eval(t, y, w.k1);
  dopri5_stages(eval, y, t, s, w);
  return {w.y5, w.err};
}

double error_norm(std::span<const double> err, std::span<const double> y0, std::span<const double> y1, double rtol,
                  double atol) {
  if (err.empty()) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < err.size(); ++i) {
    const double scale = atol + rtol * std::max(std::abs(y0[i]), std::abs(y1[i]));
    const double r = err[i] / scale;
    acc += r * r;
  }
  return std::sqrt(acc / static_cast<double>(err.size()));
}

Solution integrate(const Rhs& f, std::vector<double> y0, double t0, double t1, const SolverConfig& cfg, bool record,
                   const std::string& phase) {
  cfg.validate();
  Solution sol;
  const std::size_t n = y0.size();
  Evaluator eval(f, n, sol.stats, phase);
  auto remember = [&](double t, const std::vector<double>& y) {
    if (!record) return;
    sol.trajectory.times.push_back(t);
    sol.trajectory.states.push_back(y);
  };
  std::vector<double> y = std::move(y0);
  remember(t0, y);
  if (t0 == t1) {
    sol.state = std::move(y);
    return sol;
  }
  const double dir = t1 > t0 ? 1.0 : -1.0;

  if (cfg.method != Method::dopri5) {
    const long steps = fixed_step_count(t0, t1, cfg.step_size);
    if (steps > cfg.max_steps) throw BudgetError(t0, cfg.max_steps, phase);
    const double h = (t1 - t0) / static_cast<double>(steps);
    std::vector<double> k1(n), k2(n), k3(n), k4(n), tmp(n);
    for (long i = 0; i < steps; ++i) {
      const double t = t0 + static_cast<double>(i) * h;
      if (cfg.method == Method::euler) {
        eval(t, y, k1);
        for (std::size_t j = 0; j < n; ++j) y[j] += h * k1[j];
      } else {
        rk4_advance(eval, y, t, h, k1, k2, k3, k4, tmp);
      }
      for (double v : y) {
        if (!std::isfinite(v)) {
          throw NumericError((phase.empty() ? "" : "[" + phase + "] ") + std::string("state overflow at t=") +
                             std::to_string(t + h));
        }
      }
      ++sol.stats.accepted;
      remember(i + 1 == steps ? t1 : t0 + static_cast<double>(i + 1) * h, y);
    }
    sol.state = std::move(y);
    return sol;
  }

  DopriWork w(n);
  const double span = std::abs(t1 - t0);
  double h = cfg.initial_step.value_or(span / 100.0);
  double t = t0;
  eval(t, y, w.k1);
  long steps = 0;
  while (dir * (t1 - t) > 1e-14 * std::max(1.0, std::abs(t1))) {
    if (steps >= cfg.max_steps) throw BudgetError(t, cfg.max_steps, phase);
    if (h < cfg.min_step) throw StepUnderflow(t, h, phase);
    ++steps;
    const double remaining = std::abs(t1 - t);
    const bool last = h >= remaining;
    const double step = dir * (last ? remaining : h);
    const bool finite = dopri5_stages(eval, y, t, step, w);
    const double norm = finite ? error_norm(w.err, y, w.y5, cfg.rtol, cfg.atol)
                               : std::numeric_limits<double>::infinity();
    if (norm <= 1.0) {
      ++sol.stats.accepted;
      t = last ? t1 : t + step;
      std::swap(y, w.y5);
      std::swap(w.k1, w.k7);  // first-same-as-last
      remember(t, y);
    } else {
      ++sol.stats.rejected;
    }
    double factor = norm == 0.0 ? kMaxFactor : kSafety * std::pow(norm, -0.2);
    factor = std::clamp(std::isfinite(factor) ? factor : kMinFactor, kMinFactor, kMaxFactor);
    // A step clipped to land on t1 says nothing about the next step size.
    if (!(last && norm <= 1.0)) h = std::abs(step) * factor;
  }
  sol.state = std::move(y);
  return sol;
}

Var integrate_on_tape(const TapeRhs& f, Var y0, double t0, double t1, Method method, double step_size) {
  if (method == Method::dopri5) throw ConfigError("integrate_on_tape supports euler and rk4 only");
  require_positive_step(step_size);
  const long steps = fixed_step_count(t0, t1, step_size);
  const double h = (t1 - t0) / static_cast<double>(steps);
  Var y = y0;
  for (long i = 0; i < steps; ++i) {
    const double t = t0 + static_cast<double>(i) * h;
    if (method == Method::euler) {
      y = add(y, scale(f(t, y), h));
      continue;
    }
    Var k1 = f(t, y);
    Var k2 = f(t + 0.5 * h, add(y, scale(k1, 0.5 * h)));
    Var k3 = f(t + 0.5 * h, add(y, scale(k2, 0.5 * h)));
    Var k4 = f(t + h, add(y, scale(k3, h)));
    Var incr = add(add(k1, scale(k2, 2.0)), add(scale(k3, 2.0), k4));
    y = add(y, scale(incr, h / 6.0));
  }
  return y;
}

}  // namespace ace
