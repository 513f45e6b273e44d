#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "ace/attention.hpp"
#include "ace/data.hpp"

namespace ace {

enum class ModelKind { node, augmented_node, ace_pairwise, ace_elementwise, fixed_corr, fc_init };

ModelKind parse_model_kind(const std::string& name);
std::string model_kind_name(ModelKind kind);

struct ModelSpec {
  Task task = Task::crossing;
  ModelKind kind = ModelKind::node;
  /// Per-sample input shape: crossing {1}, var_forecast {w, d}, mnist {1, H, W}.
  Shape input_shape;
  /// Width of the MLP hidden layers.
  std::size_t hidden = 16;
  /// Zero dimensions appended by augmented_node.
  std::size_t augment = 5;
  /// Feature channels of the image model.
  std::size_t channels = 8;
  std::size_t classes = 10;
  /// Overrides of the per-task defaults for f and g (toy and ablation models).
  std::optional<OdeKind> f_kind;
  std::optional<std::vector<std::size_t>> f_hidden;
  std::optional<std::vector<std::size_t>> g_hidden;
};

/// theta_f, theta_g, theta_q and everything else (encoder, head).
struct ModelParams {
  ParamStore f, g, q, others;

  std::size_t size() const { return f.size() + g.size() + q.size() + others.size(); }
  /// One store with "f.", "g.", "q.", "others." name prefixes, for checkpoints.
  ParamStore merged() const;
  static ModelParams split(const ParamStore& merged);
  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

class Model {
 public:
  explicit Model(ModelSpec spec);

  const ModelSpec& spec() const { return spec_; }
  AttentionKind attention() const { return attention_; }
  const Shape& hidden_shape() const { return h_shape_; }
  bool classification() const { return spec_.task == Task::mnist || spec_.task == Task::crossing; }

  ModelParams init(std::uint64_t seed) const;
  /// Throws ConfigError when `p` does not match this model's parameter names and shapes.
  void check_params(const ModelParams& p) const;
  std::size_t parameter_count() const;

  CoupledSystem system(std::size_t batch) const;

  /// Packed z(0) for a batch. `others` and `q` may be bound with or without gradients.
  Var initial_state(const BoundParams& others, const BoundParams& q, Tape& tape, const Batch& batch) const;
  /// Prediction from the packed terminal state: regression values or class logits.
  Var readout(const BoundParams& others, Var z1, std::size_t batch) const;
  /// Task loss: MSE for regression, cross entropy for classification (crossing uses MSE to +-1).
  Var task_loss(Var prediction, const Batch& batch) const;
  /// Validation metric: accuracy (classification) or MSE.
  double metric(const Tensor& prediction, const Batch& batch) const;
  /// Larger is better for accuracy, smaller for MSE.
  bool better(double candidate, double incumbent) const;

 private:
  ModelSpec spec_;
  AttentionKind attention_ = AttentionKind::none;
  Shape h_shape_;
  OdeFunction f_;
  OdeFunction g_;
  bool has_q_ = false;
  InitialAttention q_;
};

}  // namespace ace
