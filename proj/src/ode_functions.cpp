#include "ace/ode_functions.hpp"

#include <algorithm>

#include "ace/errors.hpp"
#include "ace/ops.hpp"

namespace ace {

namespace {

Shape batched(std::size_t batch, const Shape& s) {
  Shape out{batch};
  out.insert(out.end(), s.begin(), s.end());
  return out;
}

std::string layer_name(const char* prefix, std::size_t i) { return prefix + std::to_string(i); }

}  // namespace

OdeKind parse_ode_kind(const std::string& name) {
  if (name == "conv_block") return OdeKind::conv_block;
  if (name == "mlp_tanh") return OdeKind::mlp_tanh;
  if (name == "gru_cell") return OdeKind::gru_cell;
  if (name == "zero") return OdeKind::zero;
  throw ConfigError("unknown ODE function kind '" + name + "'");
}

std::string ode_kind_name(OdeKind kind) {
  switch (kind) {
    case OdeKind::conv_block: return "conv_block";
    case OdeKind::mlp_tanh: return "mlp_tanh";
    case OdeKind::gru_cell: return "gru_cell";
    case OdeKind::zero: return "zero";
  }
  return "?";
}

OdeFunction::OdeFunction(OdeFunctionSpec spec) : spec_(std::move(spec)) {
  if (spec_.input_shape.empty()) spec_.input_shape = spec_.state_shape;
  if (spec_.state_shape.empty()) throw ConfigError("ODE function needs a state shape");
  switch (spec_.kind) {
    case OdeKind::conv_block:
      if (spec_.state_shape.size() != 3 || spec_.input_shape != spec_.state_shape) {
        throw ConfigError("conv_block maps a [C x H x W] feature map to itself");
      }
      if (spec_.layers != 2 && spec_.layers != 3) throw ConfigError("conv_block supports 2 or 3 layers");
      if (spec_.state_shape[0] % conv_groups() != 0) {
        throw ConfigError("conv_block: channels not divisible by group count");
      }
      break;
    case OdeKind::gru_cell:
      if (!spec_.conditioned && spec_.input_shape != spec_.state_shape) {
        throw ConfigError("gru_cell without conditioning needs equal input and state shapes");
      }
      break;
    case OdeKind::mlp_tanh:
    case OdeKind::zero:
      break;
  }
}

std::size_t OdeFunction::conv_groups() const {
  return spec_.groups ? spec_.groups : std::min<std::size_t>(32, spec_.state_shape[0]);
}

ParamStore OdeFunction::init(std::mt19937_64& rng) const {
  ParamStore p;
  const std::size_t in = shape_size(spec_.input_shape);
  const std::size_t out = shape_size(spec_.state_shape);
  switch (spec_.kind) {
    case OdeKind::zero:
      break;
    case OdeKind::mlp_tanh: {
      std::size_t prev = in + (spec_.time_input ? 1 : 0);
      std::vector<std::size_t> widths = spec_.hidden;
      widths.push_back(out);
      for (std::size_t i = 0; i < widths.size(); ++i) {
        p.add(layer_name("W", i), uniform_fan_in({widths[i], prev}, prev, rng));
        p.add(layer_name("b", i), Tensor(Shape{widths[i]}));
        prev = widths[i];
      }
      break;
    }
    case OdeKind::conv_block: {
      const std::size_t c = spec_.state_shape[0];
      p.add("norm0.gamma", Tensor(Shape{c}, 1.0));
      p.add("norm0.beta", Tensor(Shape{c}));
      for (int i = 1; i < spec_.layers; ++i) {
        const std::size_t cin = c + (i == 1 ? 1 : 0);
        p.add(layer_name("conv", i), uniform_fan_in({c, cin, 3, 3}, cin * 9, rng));
        p.add(layer_name("norm", i) + ".gamma", Tensor(Shape{c}, 1.0));
        p.add(layer_name("norm", i) + ".beta", Tensor(Shape{c}));
      }
      break;
    }
    case OdeKind::gru_cell: {
      const std::size_t cond = spec_.conditioned ? in : 0;
      for (const char* gate : {"z", "r", "c"}) {
        p.add(std::string("W_") + gate, uniform_fan_in({out, out}, out + cond, rng));
        if (cond) p.add(std::string("U_") + gate, uniform_fan_in({out, cond}, out + cond, rng));
        p.add(std::string("b_") + gate, Tensor(Shape{out}));
      }
      break;
    }
  }
  return p;
}

std::size_t OdeFunction::parameter_count() const {
  const std::size_t in = shape_size(spec_.input_shape);
  const std::size_t out = shape_size(spec_.state_shape);
  switch (spec_.kind) {
    case OdeKind::zero:
      return 0;
    case OdeKind::mlp_tanh: {
      std::size_t prev = in + (spec_.time_input ? 1 : 0), total = 0;
      std::vector<std::size_t> widths = spec_.hidden;
      widths.push_back(out);
      for (auto w : widths) total += w * prev + w, prev = w;
      return total;
    }
    case OdeKind::conv_block: {
      const std::size_t c = spec_.state_shape[0];
      std::size_t total = 2 * c;
      for (int i = 1; i < spec_.layers; ++i) total += c * (c + (i == 1 ? 1 : 0)) * 9 + 2 * c;
      return total;
    }
    case OdeKind::gru_cell: {
      const std::size_t cond = spec_.conditioned ? in : 0;
      return 3 * (out * out + out * cond + out);
    }
  }
  return 0;
}

Var OdeFunction::eval(const BoundParams& p, Var input, Var state, double t) const {
  const std::size_t batch = state.shape().at(0);
  if (state.shape() != batched(batch, spec_.state_shape) || input.shape() != batched(batch, spec_.input_shape)) {
    throw DimensionError(ode_kind_name(spec_.kind) + ": got input " + shape_string(input.shape()) + " and state " +
                         shape_string(state.shape()) + ", expected per-sample " + shape_string(spec_.input_shape) +
                         " and " + shape_string(spec_.state_shape));
  }
  switch (spec_.kind) {
    case OdeKind::zero:
      return state.tape->constant(Tensor(state.shape()));
    case OdeKind::mlp_tanh:
      return eval_mlp(p, input, t);
    case OdeKind::conv_block:
      return eval_conv(p, input, t);
    case OdeKind::gru_cell:
      return eval_gru(p, input, state);
  }
  throw ConfigError("unreachable ODE kind");
}

Var OdeFunction::eval_mlp(const BoundParams& p, Var input, double t) const {
  const std::size_t batch = input.shape()[0];
  Var x = reshape(input, {batch, shape_size(spec_.input_shape)});
  if (spec_.time_input) x = append_time_column(x, t);
  const std::size_t layers = spec_.hidden.size() + 1;
  for (std::size_t i = 0; i < layers; ++i) {
    Var b = p[layer_name("b", i)];
    x = linear(x, p[layer_name("W", i)], &b);
    if (i + 1 < layers || !spec_.final_linear) x = ace::tanh(x);
  }
  return reshape(x, batched(batch, spec_.state_shape));
}

Var OdeFunction::eval_conv(const BoundParams& p, Var input, double t) const {
  const std::size_t groups = conv_groups();
  Var x = relu(group_norm(input, p["norm0.gamma"], p["norm0.beta"], groups));
  for (int i = 1; i < spec_.layers; ++i) {
    if (i == 1) x = append_time_channel(x, t);
    x = conv2d(x, p[layer_name("conv", i)]);
    const std::string norm = layer_name("norm", i);
    x = group_norm(x, p[norm + ".gamma"], p[norm + ".beta"], groups);
    if (i + 1 < spec_.layers) x = relu(x);
  }
  return x;
}

Var OdeFunction::eval_gru(const BoundParams& p, Var input, Var state) const {
  const std::size_t batch = state.shape()[0];
  const std::size_t n = shape_size(spec_.state_shape);
  Var x = reshape(spec_.conditioned ? state : input, {batch, n});
  Var u;
  if (spec_.conditioned) u = reshape(input, {batch, shape_size(spec_.input_shape)});
  auto gate = [&](const std::string& g, Var rec) {
    Var b = p["b_" + g];
    Var pre = linear(rec, p["W_" + g], &b);
    if (spec_.conditioned) pre = add(pre, linear(u, p["U_" + g]));
    return pre;
  };
  Var z = sigmoid(gate("z", x));
  Var r = sigmoid(gate("r", x));
  Var c = ace::tanh(gate("c", mul(r, x)));
  // dx/dt = (1 - z) * (c - x)
  Var one_minus_z = sub(x.tape->constant(Tensor(z.shape(), 1.0)), z);
  return reshape(mul(one_minus_z, sub(c, x)), batched(batch, spec_.state_shape));
}

}  // namespace ace
