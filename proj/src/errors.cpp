#include "ace/errors.hpp"

#include <sstream>

namespace ace {

namespace {

std::string with_phase(const std::string& phase, const std::string& msg) {
  return phase.empty() ? msg : "[" + phase + "] " + msg;
}

std::string underflow_message(double t, double step) {
  std::ostringstream os;
  os.precision(17);
  os << "step size underflow at t=" << t << " (proposed step " << step << ")";
  return os.str();
}

std::string budget_message(double t, long steps) {
  std::ostringstream os;
  os.precision(17);
  os << "step budget of " << steps << " exhausted at t=" << t;
  return os.str();
}

}  // namespace

StepUnderflow::StepUnderflow(double t, double step, const std::string& phase)
    : Error(with_phase(phase, underflow_message(t, step))), t_(t), step_(step) {}

BudgetError::BudgetError(double t, long steps, const std::string& phase)
    : Error(with_phase(phase, budget_message(t, steps))), t_(t) {}

}  // namespace ace
