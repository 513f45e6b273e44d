#pragma once

#include <random>
#include <string>
#include <vector>

#include "ace/params.hpp"
#include "ace/tape.hpp"

namespace ace {

enum class OdeKind { conv_block, mlp_tanh, gru_cell, zero };

OdeKind parse_ode_kind(const std::string& name);
std::string ode_kind_name(OdeKind kind);

struct OdeFunctionSpec {
  OdeKind kind = OdeKind::zero;
  /// Per-sample shape of the state this function drives (its output).
  Shape state_shape;
  /// Per-sample shape of the (attended) input. Equals state_shape for the hidden NODE;
  /// differs for a pairwise attention NODE, whose input is h' and whose output is da/dt.
  Shape input_shape;

  // mlp_tanh
  std::vector<std::size_t> hidden;
  bool final_linear = true;
  bool time_input = true;

  // conv_block
  int layers = 3;
  /// 0 selects min(32, channels).
  std::size_t groups = 0;

  /// gru_cell only: the recurrent variable is the driven state and the input enters
  /// through extra U matrices. Otherwise the input itself is the recurrent variable.
  bool conditioned = false;
};

/// Parameterised right-hand side. Evaluation is batched: tensors carry a leading batch axis.
class OdeFunction {
 public:
  OdeFunction() = default;
  explicit OdeFunction(OdeFunctionSpec spec);

  const OdeFunctionSpec& spec() const { return spec_; }
  OdeKind kind() const { return spec_.kind; }

  ParamStore init(std::mt19937_64& rng) const;
  /// Pure function of kind and shapes.
  std::size_t parameter_count() const;

  /// `input` is [B x input_shape...], `state` is [B x state_shape...]; returns [B x state_shape...].
  Var eval(const BoundParams& p, Var input, Var state, double t) const;

 private:
  Var eval_mlp(const BoundParams& p, Var input, double t) const;
  Var eval_conv(const BoundParams& p, Var input, double t) const;
  Var eval_gru(const BoundParams& p, Var input, Var state) const;

  std::size_t conv_groups() const;

  OdeFunctionSpec spec_;
};

}  // namespace ace
