#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "ace/model.hpp"
#include "ace/solvers.hpp"

namespace ace {

/// l2 is the squared Euclidean norm; l2_norm the plain one.
enum class RegNorm { l1, l2, l2_norm };

RegNorm parse_reg_norm(const std::string& name);
std::string reg_norm_name(RegNorm norm);

struct LossSpec {
  double lambda = 0.0;
  RegNorm norm = RegNorm::l2;
  void validate() const;
};

/// lambda * ||theta_g|| under `spec`.
double regularizer(const ParamStore& theta_g, const LossSpec& spec);
/// Closed form: 2 lambda theta (l2), lambda theta / ||theta|| (l2_norm, 0 at the origin),
/// lambda sign(theta) with sign(0) = 0 (l1).
ParamStore regularizer_gradient(const ParamStore& theta_g, const LossSpec& spec);

/// Task loss L_h.
Var loss_h(const Model& model, Var prediction, const Batch& batch);
/// L_a = L_task + lambda ||theta_g||, with theta_g given as tape vars.
Var loss_a(const Model& model, Var prediction, const Batch& batch, const std::vector<Var>& theta_g, const LossSpec& spec);

/// Phase f trains theta_f, theta_q and theta_others on L_h; phase g trains theta_g on L_a.
enum class Phase { f, g };
std::string phase_tag(Phase phase);

struct GradientOptions {
  /// Negative control for gradient checks: flips the sign of the adjoint parameter integrand.
  bool corrupt_adjoint_sign = false;
  /// Multiplies the loss before differentiation.
  double loss_scale = 1.0;
};

struct GradientResult {
  double loss_h = 0.0;
  double loss_a = 0.0;
  /// Gradients of the phase's loss. Stores outside the phase hold zeros.
  ModelParams grad;
  Tensor prediction;
  SolverStats forward;
  SolverStats adjoint;
};

/// Forward with dopri5/euler/rk4 per `cfg`, then the coupled adjoint over the packed (h, a) state.
GradientResult adjoint_gradients(const Model& model, const ModelParams& params, const Batch& batch, Phase phase,
                                 const LossSpec& loss, const SolverConfig& cfg, const GradientOptions& options = {});
inline GradientResult grad_theta_f(const Model& model, const ModelParams& params, const Batch& batch,
                                   const LossSpec& loss, const SolverConfig& cfg) {
  return adjoint_gradients(model, params, batch, Phase::f, loss, cfg);
}
inline GradientResult grad_theta_g(const Model& model, const ModelParams& params, const Batch& batch,
                                   const LossSpec& loss, const SolverConfig& cfg) {
  return adjoint_gradients(model, params, batch, Phase::g, loss, cfg);
}

/// Backpropagation through a fixed-step solve recorded on one tape.
GradientResult tape_gradients(const Model& model, const ModelParams& params, const Batch& batch, Phase phase,
                              const LossSpec& loss, Method method, double step_size);

struct Prediction {
  Tensor value;
  SolverStats stats;
};
Prediction predict(const Model& model, const ModelParams& params, const Batch& batch, const SolverConfig& cfg);

/// L_h (phase f) or L_a (phase g) at `params`.
double phase_loss(const Model& model, const ModelParams& params, const Batch& batch, Phase phase, const LossSpec& loss,
                  const SolverConfig& cfg);

/// Central differences of `loss` around `at`. Throws SizeError above `max_params` scalars.
ParamStore finite_difference_oracle(const std::function<double(const ParamStore&)>& loss, const ParamStore& at,
                                    double eps = 1e-5, std::size_t max_params = 2000);
/// Central differences of the phase loss w.r.t. the phase's stores, solved at rtol = atol = 1e-9.
ModelParams finite_difference_gradients(const Model& model, const ModelParams& params, const Batch& batch, Phase phase,
                                        const LossSpec& loss, double eps = 1e-5, std::size_t max_params = 2000);

/// max |a - b| / max(max |b|, 1e-12) over one parameter group; 0 for empty groups.
double gradient_relative_error(const ParamStore& a, const ParamStore& b);

struct GradcheckRow {
  std::string group;
  std::size_t size = 0;
  double adjoint_vs_fd = 0.0;
  double adjoint_vs_tape = 0.0;
  double tape_vs_fd = 0.0;
};

struct GradcheckReport {
  std::vector<GradcheckRow> rows;
  double tolerance = 1e-3;
  /// No parameters to check.
  bool vacuous = false;
  bool pass = false;
};

/// Adjoint vs finite differences vs the rk4 tape oracle (step 1e-3) for theta_f, theta_q,
/// theta_others (on L_h) and theta_g (on L_a).
GradcheckReport gradient_check(const Model& model, const ModelParams& params, const Batch& batch, const LossSpec& loss,
                               const SolverConfig& cfg, const GradientOptions& options = {}, double tolerance = 1e-3);

class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step(ParamStore& params, const ParamStore& grad);

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<double> m_, v_;
};

struct TrainConfig {
  int epochs = 10;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  LossSpec loss;
  SolverConfig solver;
  /// Also score the test split after every epoch.
  bool track_test = false;
};

struct EpochRecord {
  int epoch = 0;
  /// Mean batch losses of phases (i) and (ii); absent in the initial record or when a phase has nothing to train.
  std::optional<double> loss_h;
  std::optional<double> loss_a;
  double val_metric = 0.0;
  std::optional<double> test_metric;
  bool improved = false;
  long forward_steps = 0;
  long adjoint_steps = 0;
  long rhs_evals = 0;
  /// Wall clock; kept out of the deterministic metrics stream.
  double seconds = 0.0;
};

struct SplitScore {
  double metric = 0.0;
  Tensor predictions;
  SolverStats stats;
};

SplitScore evaluate_split(const Model& model, const ModelParams& params, const Dataset& data,
                          const std::vector<std::size_t>& indices, std::size_t batch_size, const SolverConfig& cfg);

struct PhaseSummary {
  double mean_loss_h = 0.0;
  double mean_loss_a = 0.0;
  SolverStats forward;
  SolverStats adjoint;
};

/// One pass over the shuffled train split updating only the phase's stores.
PhaseSummary train_phase(const Model& model, ModelParams& params, const Dataset& data, Phase phase,
                         const TrainConfig& cfg, std::mt19937_64& rng, std::vector<Adam>& optimizers);

struct TrainResult {
  ModelParams best;
  ModelParams last;
  int best_epoch = 0;
  double best_val = 0.0;
  std::vector<EpochRecord> history;
};

/// Alternating training. Record 0 scores the initial parameters; the best checkpoint is only
/// replaced on strict validation improvement.
TrainResult train(const Model& model, ModelParams init, const Dataset& data, const TrainConfig& cfg,
                  const std::function<void(const EpochRecord&)>& on_epoch = {});

}  // namespace ace
