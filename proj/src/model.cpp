#include "ace/model.hpp"

#include <random>

#include "ace/errors.hpp"
#include "ace/metrics.hpp"
#include "ace/ops.hpp"

namespace ace {

namespace {

Shape batched(std::size_t batch, const Shape& s) {
  Shape out{batch};
  out.insert(out.end(), s.begin(), s.end());
  return out;
}

const char* const store_prefixes[] = {"f.", "g.", "q.", "others."};

}  // namespace

ModelKind parse_model_kind(const std::string& name) {
  if (name == "node") return ModelKind::node;
  if (name == "augmented_node") return ModelKind::augmented_node;
  if (name == "ace_pairwise") return ModelKind::ace_pairwise;
  if (name == "ace_elementwise") return ModelKind::ace_elementwise;
  if (name == "fixed_corr") return ModelKind::fixed_corr;
  if (name == "fc_init") return ModelKind::fc_init;
  throw ConfigError("unknown model '" + name + "'");
}

std::string model_kind_name(ModelKind kind) {
  switch (kind) {
    case ModelKind::node: return "node";
    case ModelKind::augmented_node: return "augmented_node";
    case ModelKind::ace_pairwise: return "ace_pairwise";
    case ModelKind::ace_elementwise: return "ace_elementwise";
    case ModelKind::fixed_corr: return "fixed_corr";
    case ModelKind::fc_init: return "fc_init";
  }
  return "?";
}

ParamStore ModelParams::merged() const {
  ParamStore out;
  const ParamStore* parts[] = {&f, &g, &q, &others};
  for (int i = 0; i < 4; ++i) {
    for (const auto& [name, t] : parts[i]->entries()) out.add(store_prefixes[i] + name, t);
  }
  return out;
}

ModelParams ModelParams::split(const ParamStore& merged) {
  ModelParams p;
  ParamStore* parts[] = {&p.f, &p.g, &p.q, &p.others};
  for (const auto& [name, t] : merged.entries()) {
    bool placed = false;
    for (int i = 0; i < 4 && !placed; ++i) {
      const std::string prefix = store_prefixes[i];
      if (name.starts_with(prefix)) {
        parts[i]->add(name.substr(prefix.size()), t);
        placed = true;
      }
    }
    if (!placed) throw FormatError("checkpoint tensor '" + name + "' belongs to no parameter group");
  }
  return p;
}

Model::Model(ModelSpec spec) : spec_(std::move(spec)) {
  const auto& in = spec_.input_shape;
  const ModelKind k = spec_.kind;
  auto reject = [&] {
    throw ConfigError("model " + model_kind_name(k) + " is not available for task " + task_name(spec_.task));
  };
  switch (k) {
    case ModelKind::node:
    case ModelKind::augmented_node: attention_ = AttentionKind::none; break;
    case ModelKind::ace_elementwise: attention_ = AttentionKind::elementwise; break;
    case ModelKind::ace_pairwise:
    case ModelKind::fc_init: attention_ = AttentionKind::pairwise; break;
    case ModelKind::fixed_corr: attention_ = AttentionKind::fixed_correlation; break;
  }
  const std::size_t extra = k == ModelKind::augmented_node ? spec_.augment : 0;
  const std::size_t H = spec_.hidden;
  auto widths = [](const std::optional<std::vector<std::size_t>>& o, std::vector<std::size_t> dflt) {
    return o ? *o : dflt;
  };
  auto vector_f = [&](OdeKind dflt, std::vector<std::size_t> hidden) {
    const OdeKind kind = spec_.f_kind.value_or(dflt);
    if (kind == OdeKind::conv_block) throw ConfigError("conv_block f needs an image task");
    return OdeFunction({.kind = kind, .state_shape = h_shape_, .hidden = widths(spec_.f_hidden, std::move(hidden))});
  };

  switch (spec_.task) {
    case Task::crossing: {
      if (in != Shape{1}) throw ConfigError("crossing inputs are scalars");
      if (k != ModelKind::node && k != ModelKind::augmented_node && k != ModelKind::ace_elementwise) reject();
      h_shape_ = {1 + extra};
      f_ = vector_f(OdeKind::mlp_tanh, {H, H});
      if (k == ModelKind::ace_elementwise) {
        g_ = OdeFunction({.kind = OdeKind::mlp_tanh, .state_shape = h_shape_, .hidden = widths(spec_.g_hidden, {H, H})});
        has_q_ = true;
        q_ = InitialAttention(InitialAttention::Kind::fc, attention_, h_shape_);
      }
      break;
    }
    case Task::var_forecast: {
      if (in.size() != 2 || in[0] < 2) throw ConfigError("var_forecast inputs are [window x d] with window >= 2");
      const std::size_t d = in[1];
      h_shape_ = {d + extra};
      f_ = vector_f(OdeKind::gru_cell, {H});
      if (attention_ == AttentionKind::pairwise || attention_ == AttentionKind::elementwise) {
        g_ = OdeFunction({.kind = OdeKind::mlp_tanh,
                          .state_shape = attention_shape(attention_, h_shape_),
                          .input_shape = h_shape_,
                          .hidden = widths(spec_.g_hidden, {H})});
      }
      if (k == ModelKind::fc_init || k == ModelKind::ace_elementwise) {
        has_q_ = true;
        q_ = InitialAttention(InitialAttention::Kind::fc, attention_, h_shape_);
      }
      break;
    }
    case Task::mnist: {
      if (in.size() != 3 || in[0] != 1 || in[1] % 2 || in[2] % 2) throw ConfigError("mnist inputs are [1 x H x W], H and W even");
      if (k != ModelKind::node && k != ModelKind::ace_elementwise) reject();
      if (spec_.f_kind && *spec_.f_kind != OdeKind::conv_block) throw ConfigError("the image model uses conv_block functions");
      h_shape_ = {spec_.channels, in[1] / 2, in[2] / 2};
      if (k == ModelKind::node) {
        f_ = OdeFunction({.kind = OdeKind::conv_block, .state_shape = h_shape_, .layers = 3});
      } else {
        f_ = OdeFunction({.kind = OdeKind::conv_block, .state_shape = h_shape_, .layers = 2});
        g_ = OdeFunction({.kind = OdeKind::conv_block, .state_shape = h_shape_, .layers = 3});
        has_q_ = true;
        q_ = InitialAttention(InitialAttention::Kind::conv, attention_, h_shape_);
      }
      break;
    }
  }
  if (g_.spec().state_shape.empty()) {
    g_ = OdeFunction({.kind = OdeKind::zero, .state_shape = attention_ == AttentionKind::none ? h_shape_ : attention_shape(attention_, h_shape_), .input_shape = h_shape_});
  }
  system(1).validate();
}

ModelParams Model::init(std::uint64_t seed) const {
  std::mt19937_64 rng(seed);
  ModelParams p;
  p.f = f_.init(rng);
  p.g = g_.init(rng);
  if (has_q_) p.q = q_.init(rng);
  if (spec_.task == Task::mnist) {
    const std::size_t c = spec_.channels;
    p.others.add("enc.conv", uniform_fan_in({c, 1, 3, 3}, 9, rng));
    p.others.add("enc.gamma", Tensor({c}, 1.0));
    p.others.add("enc.beta", Tensor({c}));
    const std::size_t feat = shape_size(h_shape_);
    p.others.add("head.W", uniform_fan_in({spec_.classes, feat}, feat, rng));
    p.others.add("head.b", Tensor({spec_.classes}));
  }
  return p;
}

void Model::check_params(const ModelParams& p) const {
  const ModelParams want = init(0);
  const ParamStore* got[] = {&p.f, &p.g, &p.q, &p.others};
  const ParamStore* ref[] = {&want.f, &want.g, &want.q, &want.others};
  for (int i = 0; i < 4; ++i) {
    if (got[i]->tensor_count() != ref[i]->tensor_count()) {
      throw ConfigError(std::string("parameter group ") + store_prefixes[i] + " has " +
                        std::to_string(got[i]->tensor_count()) + " tensors, model expects " +
                        std::to_string(ref[i]->tensor_count()));
    }
    for (std::size_t j = 0; j < ref[i]->tensor_count(); ++j) {
      const auto& [gn, gt] = got[i]->entries()[j];
      const auto& [rn, rt] = ref[i]->entries()[j];
      if (gn != rn || gt.shape() != rt.shape()) {
        throw ConfigError(std::string("parameter ") + store_prefixes[i] + gn + " " + shape_string(gt.shape()) +
                          " does not match " + store_prefixes[i] + rn + " " + shape_string(rt.shape()));
      }
    }
  }
}

std::size_t Model::parameter_count() const {
  std::size_t n = f_.parameter_count() + g_.parameter_count() + (has_q_ ? q_.parameter_count() : 0);
  if (spec_.task == Task::mnist) {
    n += 9 * spec_.channels + 2 * spec_.channels + (shape_size(h_shape_) + 1) * spec_.classes;
  }
  return n;
}

CoupledSystem Model::system(std::size_t batch) const {
  return CoupledSystem{.kind = attention_, .f = f_, .g = g_, .h_shape = h_shape_, .batch = batch};
}

Var Model::initial_state(const BoundParams& others, const BoundParams& q, Tape& tape, const Batch& batch) const {
  const std::size_t B = batch.size();
  if (batch.inputs.shape() != batched(B, spec_.input_shape)) {
    throw DimensionError("batch inputs " + shape_string(batch.inputs.shape()) + " do not match per-sample shape " +
                         shape_string(spec_.input_shape));
  }
  Var h0;
  switch (spec_.task) {
    case Task::crossing:
    case Task::var_forecast: {
      const std::size_t d = spec_.task == Task::crossing ? 1 : spec_.input_shape[1];
      const std::size_t w = spec_.task == Task::crossing ? 1 : spec_.input_shape[0];
      const std::size_t width = h_shape_[0];
      Tensor h({B, width});
      for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t j = 0; j < d; ++j) h.at(b, j) = batch.inputs[(b * w + w - 1) * d + j];
      }
      h0 = tape.constant(std::move(h));
      break;
    }
    case Task::mnist: {
      Var x = tape.constant(batch.inputs);
      Var e = group_norm(conv2d(x, others["enc.conv"]), others["enc.gamma"], others["enc.beta"],
                         std::min<std::size_t>(32, spec_.channels));
      h0 = avg_pool2(relu(e));
      break;
    }
  }
  const CoupledSystem sys = system(B);
  if (attention_ == AttentionKind::none) return sys.pack(h0, h0);
  Var a0;
  if (has_q_) {
    a0 = q_.eval(q, h0);
  } else {
    // correlation of each sample's observed window
    const std::size_t w = spec_.input_shape[0], d = spec_.input_shape[1];
    Tensor a({B, d, d});
    for (std::size_t b = 0; b < B; ++b) {
      Tensor window({w, d}, std::vector<double>(batch.inputs.data().begin() + b * w * d,
                                                 batch.inputs.data().begin() + (b + 1) * w * d));
      const Tensor c = init_attention_correlation(window);
      std::copy(c.data().begin(), c.data().end(), a.data().begin() + b * d * d);
    }
    a0 = tape.constant(std::move(a));
  }
  return sys.pack(h0, a0);
}

Var Model::readout(const BoundParams& others, Var z1, std::size_t batch) const {
  Var h = system(batch).hidden(z1);
  switch (spec_.task) {
    case Task::crossing: return take_columns(h, 0, 1);
    case Task::var_forecast: return take_columns(h, 0, spec_.input_shape[1]);
    case Task::mnist: {
      Var b = others["head.b"];
      return linear(reshape(h, {batch, shape_size(h_shape_)}), others["head.W"], &b);
    }
  }
  return h;
}

Var Model::task_loss(Var prediction, const Batch& batch) const {
  if (spec_.task == Task::mnist) return cross_entropy(prediction, batch.labels);
  return mse_loss(prediction, batch.targets);
}

double Model::metric(const Tensor& prediction, const Batch& batch) const {
  switch (spec_.task) {
    case Task::crossing: {
      // class 0 is the +1 target: logits [p, -p], ties to class 0
      Tensor logits({prediction.size(), 2});
      for (std::size_t i = 0; i < prediction.size(); ++i) {
        logits.at(i, 0) = prediction[i];
        logits.at(i, 1) = -prediction[i];
      }
      return accuracy(logits, batch.labels);
    }
    case Task::var_forecast: return mse(prediction, batch.targets);
    case Task::mnist: return accuracy(prediction, batch.labels);
  }
  return 0.0;
}

bool Model::better(double candidate, double incumbent) const {
  return classification() ? candidate > incumbent : candidate < incumbent;
}

}  // namespace ace
