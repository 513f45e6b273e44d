#include "ace/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "ace/errors.hpp"
#include "ace/ops.hpp"

namespace ace {

RegNorm parse_reg_norm(const std::string& name) {
  if (name == "l1" || name == "L1") return RegNorm::l1;
  if (name == "l2" || name == "L2") return RegNorm::l2;
  if (name == "l2_norm") return RegNorm::l2_norm;
  throw ConfigError("unknown regularizer norm '" + name + "' (expected l1, l2 or l2_norm)");
}

std::string reg_norm_name(RegNorm norm) {
  switch (norm) {
    case RegNorm::l1: return "l1";
    case RegNorm::l2: return "l2";
    case RegNorm::l2_norm: return "l2_norm";
  }
  return "?";
}

void LossSpec::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("lambda must be finite and >= 0");
}

namespace {

double sum_squares(const ParamStore& p) {
  double s = 0.0;
  for (const auto& [name, t] : p.entries()) {
    for (double v : t.data()) s += v * v;
  }
  return s;
}

}  // namespace

double regularizer(const ParamStore& theta_g, const LossSpec& spec) {
  if (spec.norm == RegNorm::l2) return spec.lambda * sum_squares(theta_g);
  if (spec.norm == RegNorm::l2_norm) return spec.lambda * std::sqrt(sum_squares(theta_g));
  double s = 0.0;
  for (const auto& [name, t] : theta_g.entries()) {
    for (double v : t.data()) s += std::abs(v);
  }
  return spec.lambda * s;
}

ParamStore regularizer_gradient(const ParamStore& theta_g, const LossSpec& spec) {
  ParamStore g = theta_g;
  const double norm = std::sqrt(sum_squares(theta_g));
  for (auto& [name, t] : g.entries()) {
    for (double& v : t.data()) {
      switch (spec.norm) {
        case RegNorm::l2: v = 2.0 * spec.lambda * v; break;
        case RegNorm::l2_norm: v = norm > 0.0 ? spec.lambda * v / norm : 0.0; break;
        case RegNorm::l1: v = v > 0 ? spec.lambda : v < 0 ? -spec.lambda : 0.0; break;
      }
    }
  }
  return g;
}

Var loss_h(const Model& model, Var prediction, const Batch& batch) { return model.task_loss(prediction, batch); }

Var loss_a(const Model& model, Var prediction, const Batch& batch, const std::vector<Var>& theta_g, const LossSpec& spec) {
  Var task = model.task_loss(prediction, batch);
  if (spec.lambda == 0.0 || theta_g.empty()) return task;
  Var reg;
  for (Var v : theta_g) {
    Var term = spec.norm == RegNorm::l1 ? abs_sum(v) : square_sum(v);
    reg = reg.valid() ? add(reg, term) : term;
  }
  if (spec.norm == RegNorm::l2_norm) {
    // sqrt with gradient 0 at the origin
    const double r = std::sqrt(reg.value().item());
    reg = reg.tape->record("sqrt", Tensor::scalar(r), {reg}, [reg, r](const Tensor& g, GradSink& sink) {
      if (sink.wants(reg) && r > 0.0) sink(reg)[0] += g[0] / (2.0 * r);
    });
  }
  return add(task, scale(reg, spec.lambda));
}

std::string phase_tag(Phase phase) { return phase == Phase::f ? "adjoint-f" : "adjoint-g"; }

namespace {

ModelParams zero_grads(const ModelParams& p) {
  return {p.f.zeros_like(), p.g.zeros_like(), p.q.zeros_like(), p.others.zeros_like()};
}

void accumulate(ParamStore& into, const ParamStore& add) {
  for (std::size_t i = 0; i < into.tensor_count(); ++i) {
    auto dst = into.entries()[i].second.data();
    auto src = add.entries()[i].second.data();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
  }
}

Tensor as_vector(std::span<const double> v) { return Tensor({v.size()}, std::vector<double>(v.begin(), v.end())); }

struct AdjointOutput {
  std::vector<double> lambda0;
  std::vector<double> grad_theta;
  SolverStats stats;
};

// Augmented state [z, lambda, g_theta] integrated backward over each forward step in turn.
// z is reset to the stored forward state at every step boundary: reconstructing it by
// reverse integration alone is ill-conditioned for normalised conv dynamics.
AdjointOutput solve_adjoint(const CoupledSystem& sys, const ParamStore& theta_f, const ParamStore& theta_g, Phase phase,
                            const Trajectory& forward, std::span<const double> lambda1, const SolverConfig& cfg,
                            bool corrupt_sign) {
  const std::size_t n = forward.states.back().size();
  const ParamStore& theta = phase == Phase::f ? theta_f : theta_g;
  const std::size_t p = theta.size();
  const double param_sign = corrupt_sign ? 1.0 : -1.0;

  Rhs aug = [&](double t, std::span<const double> y, std::span<double> dy) {
    Tape tape;
    Var z = tape.leaf(as_vector(y.subspan(0, n)));
    BoundParams bf(tape, theta_f, phase == Phase::f);
    BoundParams bg(tape, theta_g, phase == Phase::g);
    Var out = sys.rhs(bf, bg, z, t);
    std::copy(out.value().data().begin(), out.value().data().end(), dy.begin());
    if (!tape.requires_grad(out)) {
      std::fill(dy.begin() + static_cast<long>(n), dy.end(), 0.0);
      return;
    }
    const Gradients g = tape.backward(out, as_vector(y.subspan(n, n)));
    const Tensor gz = g.wrt(z);
    for (std::size_t i = 0; i < n; ++i) dy[n + i] = -gz[i];
    std::size_t k = 2 * n;
    for (Var v : (phase == Phase::f ? bf : bg).vars()) {
      const Tensor gv = g.wrt(v);
      for (double x : gv.data()) dy[k++] = param_sign * x;
    }
  };

  AdjointOutput out;
  std::vector<double> y(2 * n + p, 0.0);
  std::copy(lambda1.begin(), lambda1.end(), y.begin() + static_cast<long>(n));
  long budget = cfg.max_steps;
  for (std::size_t k = forward.times.size() - 1; k > 0; --k) {
    const double hi = forward.times[k], lo = forward.times[k - 1];
    std::copy(forward.states[k].begin(), forward.states[k].end(), y.begin());
    SolverConfig local = cfg;
    local.max_steps = budget;
    local.initial_step = std::max(hi - lo, 2.0 * cfg.min_step);
    Solution sol = integrate(aug, std::move(y), hi, lo, local, false, phase_tag(phase));
    budget -= sol.stats.accepted + sol.stats.rejected;
    out.stats.rhs_evals += sol.stats.rhs_evals;
    out.stats.accepted += sol.stats.accepted;
    out.stats.rejected += sol.stats.rejected;
    y = std::move(sol.state);
  }
  out.lambda0.assign(y.begin() + static_cast<long>(n), y.begin() + static_cast<long>(2 * n));
  out.grad_theta.assign(y.begin() + static_cast<long>(2 * n), y.end());
  return out;
}

void check_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw NumericError(std::string("non-finite ") + what);
}

}  // namespace

GradientResult adjoint_gradients(const Model& model, const ModelParams& params, const Batch& batch, Phase phase,
                                 const LossSpec& loss, const SolverConfig& cfg, const GradientOptions& options) {
  loss.validate();
  const bool pf = phase == Phase::f;
  const std::size_t B = batch.size();
  const CoupledSystem sys = model.system(B);
  GradientResult r;
  r.grad = zero_grads(params);

  // z(0) stays on its tape so lambda(0) can flow into the encoder and q.
  Tape enc;
  BoundParams enc_others(enc, params.others, pf);
  BoundParams enc_q(enc, params.q, pf);
  Var z0 = model.initial_state(enc_others, enc_q, enc, batch);

  Solution fwd = integrate(numeric_rhs(sys, params.f, params.g), z0.value().values(), 0.0, 1.0, cfg, true, "forward");
  r.forward = fwd.stats;

  Tape head;
  Var z1 = head.leaf(as_vector(fwd.state));
  BoundParams head_others(head, params.others, pf);
  Var pred = model.readout(head_others, z1, B);
  Var lh = loss_h(model, pred, batch);
  r.prediction = pred.value();
  r.loss_h = lh.value().item();
  r.loss_a = r.loss_h + regularizer(params.g, loss);
  check_finite(r.loss_h, "task loss");
  const Gradients gh = head.backward(options.loss_scale == 1.0 ? lh : scale(lh, options.loss_scale));
  const Tensor lambda1 = gh.wrt(z1);

  const AdjointOutput adj =
      solve_adjoint(sys, params.f, params.g, phase, fwd.trajectory, lambda1.data(), cfg, options.corrupt_adjoint_sign);
  r.adjoint = adj.stats;

  if (pf) {
    r.grad.f.assign_flat(adj.grad_theta);
    r.grad.others = head_others.gradients(gh);
    if (enc.requires_grad(z0)) {
      const Gradients ge = enc.backward(z0, as_vector(adj.lambda0));
      accumulate(r.grad.others, enc_others.gradients(ge));
      r.grad.q = enc_q.gradients(ge);
    }
  } else {
    r.grad.g.assign_flat(adj.grad_theta);
    LossSpec scaled = loss;
    scaled.lambda *= options.loss_scale;
    accumulate(r.grad.g, regularizer_gradient(params.g, scaled));
  }
  return r;
}

GradientResult tape_gradients(const Model& model, const ModelParams& params, const Batch& batch, Phase phase,
                              const LossSpec& loss, Method method, double step_size) {
  loss.validate();
  if (method == Method::dopri5) throw ConfigError("the tape oracle needs a fixed-step method");
  const bool pf = phase == Phase::f;
  const std::size_t B = batch.size();
  const CoupledSystem sys = model.system(B);
  Tape tape;
  BoundParams f(tape, params.f, pf), g(tape, params.g, !pf), q(tape, params.q, pf), others(tape, params.others, pf);
  Var z0 = model.initial_state(others, q, tape, batch);
  Var z1 = integrate_on_tape([&](double t, Var z) { return sys.rhs(f, g, z, t); }, z0, 0.0, 1.0, method, step_size);
  Var pred = model.readout(others, z1, B);
  Var lh = loss_h(model, pred, batch);
  Var la = loss_a(model, pred, batch, g.vars(), loss);
  GradientResult r;
  r.grad = zero_grads(params);
  r.prediction = pred.value();
  r.loss_h = lh.value().item();
  r.loss_a = la.value().item();
  if (!tape.requires_grad(pf ? lh : la)) return r;
  const Gradients grads = tape.backward(pf ? lh : la);
  if (pf) {
    r.grad.f = f.gradients(grads);
    r.grad.q = q.gradients(grads);
    r.grad.others = others.gradients(grads);
  } else {
    r.grad.g = g.gradients(grads);
  }
  r.forward.accepted = fixed_step_count(0.0, 1.0, step_size);
  return r;
}

Prediction predict(const Model& model, const ModelParams& params, const Batch& batch, const SolverConfig& cfg) {
  const std::size_t B = batch.size();
  const CoupledSystem sys = model.system(B);
  Tape tape(false);
  BoundParams others(tape, params.others, false), q(tape, params.q, false);
  Var z0 = model.initial_state(others, q, tape, batch);
  Solution sol = integrate(numeric_rhs(sys, params.f, params.g), z0.value().values(), 0.0, 1.0, cfg, false, "forward");
  Var pred = model.readout(others, tape.constant(as_vector(sol.state)), B);
  return {pred.value(), sol.stats};
}

double phase_loss(const Model& model, const ModelParams& params, const Batch& batch, Phase phase, const LossSpec& loss,
                  const SolverConfig& cfg) {
  const Prediction p = predict(model, params, batch, cfg);
  Tape tape(false);
  const double task = loss_h(model, tape.constant(p.value), batch).value().item();
  return phase == Phase::f ? task : task + regularizer(params.g, loss);
}

ParamStore finite_difference_oracle(const std::function<double(const ParamStore&)>& loss, const ParamStore& at,
                                    double eps, std::size_t max_params) {
  if (at.size() > max_params) {
    throw SizeError("finite differences over " + std::to_string(at.size()) + " parameters exceed the budget of " +
                    std::to_string(max_params));
  }
  std::vector<double> theta = at.flatten();
  std::vector<double> grad(theta.size());
  ParamStore probe = at;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double keep = theta[i];
    theta[i] = keep + eps;
    probe.assign_flat(theta);
    const double up = loss(probe);
    theta[i] = keep - eps;
    probe.assign_flat(theta);
    const double down = loss(probe);
    theta[i] = keep;
    grad[i] = (up - down) / (2.0 * eps);
  }
  ParamStore out = at.zeros_like();
  out.assign_flat(grad);
  return out;
}

ModelParams finite_difference_gradients(const Model& model, const ModelParams& params, const Batch& batch, Phase phase,
                                        const LossSpec& loss, double eps, std::size_t max_params) {
  SolverConfig tight;
  tight.rtol = tight.atol = 1e-9;
  const ModelParams scheduled = phase == Phase::f ? ModelParams{params.f, {}, params.q, params.others}
                                                  : ModelParams{{}, params.g, {}, {}};
  if (scheduled.size() > max_params) {
    throw SizeError("finite differences over " + std::to_string(scheduled.size()) + " parameters exceed the budget of " +
                    std::to_string(max_params));
  }
  ModelParams out = zero_grads(params);
  auto over = [&](ParamStore ModelParams::*member) {
    if ((params.*member).empty()) return;
    out.*member = finite_difference_oracle(
        [&](const ParamStore& s) {
          ModelParams probe = params;
          probe.*member = s;
          return phase_loss(model, probe, batch, phase, loss, tight);
        },
        params.*member, eps, max_params);
  };
  if (phase == Phase::f) {
    over(&ModelParams::f);
    over(&ModelParams::q);
    over(&ModelParams::others);
  } else {
    over(&ModelParams::g);
  }
  return out;
}

double gradient_relative_error(const ParamStore& a, const ParamStore& b) {
  const auto x = a.flatten(), y = b.flatten();
  if (x.size() != y.size()) throw DimensionError("gradient groups differ in size");
  double diff = 0.0, scale_ = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    diff = std::max(diff, std::abs(x[i] - y[i]));
    scale_ = std::max(scale_, std::abs(y[i]));
  }
  return diff / std::max(scale_, 1e-12);
}

GradcheckReport gradient_check(const Model& model, const ModelParams& params, const Batch& batch, const LossSpec& loss,
                               const SolverConfig& cfg, const GradientOptions& options, double tolerance) {
  GradcheckReport report;
  report.tolerance = tolerance;
  report.vacuous = params.size() == 0;
  report.pass = true;
  for (Phase phase : {Phase::f, Phase::g}) {
    const ModelParams adj = adjoint_gradients(model, params, batch, phase, loss, cfg, options).grad;
    const ModelParams fd = finite_difference_gradients(model, params, batch, phase, loss);
    const ModelParams tp = tape_gradients(model, params, batch, phase, loss, Method::rk4, 1e-3).grad;
    std::vector<std::pair<std::string, ParamStore ModelParams::*>> groups;
    if (phase == Phase::f) {
      groups = {{"theta_f", &ModelParams::f}, {"theta_q", &ModelParams::q}, {"theta_others", &ModelParams::others}};
    } else {
      groups = {{"theta_g", &ModelParams::g}};
    }
    for (const auto& [name, member] : groups) {
      if ((params.*member).empty()) continue;
      GradcheckRow row{name, (params.*member).size(), gradient_relative_error(adj.*member, fd.*member),
                       gradient_relative_error(adj.*member, tp.*member), gradient_relative_error(tp.*member, fd.*member)};
      report.pass = report.pass && row.adjoint_vs_fd < tolerance && row.adjoint_vs_tape < tolerance &&
                    row.tape_vs_fd < tolerance;
      report.rows.push_back(row);
    }
  }
  return report;
}

Adam::Adam(double lr, double beta1, double beta2, double eps) : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
}

void Adam::step(ParamStore& params, const ParamStore& grad) {
  std::vector<double> theta = params.flatten();
  const std::vector<double> g = grad.flatten();
  if (g.size() != theta.size()) throw DimensionError("gradient and parameter sizes differ");
  if (m_.empty()) {
    m_.assign(theta.size(), 0.0);
    v_.assign(theta.size(), 0.0);
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < theta.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g[i] * g[i];
    theta[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
  }
  params.assign_flat(theta);
}

namespace {

void add_stats(SolverStats& into, const SolverStats& s) {
  into.rhs_evals += s.rhs_evals;
  into.accepted += s.accepted;
  into.rejected += s.rejected;
}

}  // namespace

SplitScore evaluate_split(const Model& model, const ModelParams& params, const Dataset& data,
                          const std::vector<std::size_t>& indices, std::size_t batch_size, const SolverConfig& cfg) {
  if (indices.empty()) throw DataError("cannot evaluate an empty split");
  SplitScore s;
  std::vector<double> preds;
  Shape pred_shape;
  for (std::size_t start = 0; start < indices.size(); start += batch_size) {
    const std::size_t end = std::min(indices.size(), start + batch_size);
    const Batch b = gather(data, std::span(indices).subspan(start, end - start));
    const Prediction p = predict(model, params, b, cfg);
    preds.insert(preds.end(), p.value.data().begin(), p.value.data().end());
    pred_shape = p.value.shape();
    add_stats(s.stats, p.stats);
  }
  pred_shape[0] = indices.size();
  s.predictions = Tensor(pred_shape, std::move(preds));
  s.metric = model.metric(s.predictions, gather(data, indices));
  return s;
}

PhaseSummary train_phase(const Model& model, ModelParams& params, const Dataset& data, Phase phase,
                         const TrainConfig& cfg, std::mt19937_64& rng, std::vector<Adam>& optimizers) {
  std::vector<std::size_t> order = data.train;
  std::shuffle(order.begin(), order.end(), rng);
  PhaseSummary s;
  double weight = 0.0;
  for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
    const std::size_t end = std::min(order.size(), start + cfg.batch_size);
    const Batch b = gather(data, std::span(order).subspan(start, end - start));
    const GradientResult r = adjoint_gradients(model, params, b, phase, cfg.loss, cfg.solver);
    const double loss = phase == Phase::f ? r.loss_h : r.loss_a;
    if (!std::isfinite(loss)) throw NumericError("non-finite loss " + std::to_string(loss));
    const double n = static_cast<double>(b.size());
    s.mean_loss_h += n * r.loss_h;
    s.mean_loss_a += n * r.loss_a;
    weight += n;
    add_stats(s.forward, r.forward);
    add_stats(s.adjoint, r.adjoint);
    if (phase == Phase::f) {
      optimizers[0].step(params.f, r.grad.f);
      optimizers[2].step(params.q, r.grad.q);
      optimizers[3].step(params.others, r.grad.others);
    } else {
      optimizers[1].step(params.g, r.grad.g);
    }
  }
  s.mean_loss_h /= weight;
  s.mean_loss_a /= weight;
  return s;
}

TrainResult train(const Model& model, ModelParams init, const Dataset& data, const TrainConfig& cfg,
                  const std::function<void(const EpochRecord&)>& on_epoch) {
  cfg.loss.validate();
  cfg.solver.validate();
  if (cfg.epochs < 0) throw ConfigError("epochs must be >= 0");
  if (cfg.batch_size == 0) throw ConfigError("batch_size must be positive");
  if (data.train.empty() || data.val.empty()) throw DataError("training needs non-empty train and val splits");
  model.check_params(init);

  using clock = std::chrono::steady_clock;
  std::mt19937_64 rng(cfg.seed);
  std::vector<Adam> optimizers(4, Adam(cfg.lr));
  ModelParams params = std::move(init);
  TrainResult result;

  auto score = [&](EpochRecord& rec) {
    const SplitScore v = evaluate_split(model, params, data, data.val, cfg.batch_size, cfg.solver);
    rec.val_metric = v.metric;
    rec.forward_steps += v.stats.accepted + v.stats.rejected;
    rec.rhs_evals += v.stats.rhs_evals;
    if (cfg.track_test && !data.test.empty()) {
      rec.test_metric = evaluate_split(model, params, data, data.test, cfg.batch_size, cfg.solver).metric;
    }
  };

  {
    const auto t0 = clock::now();
    EpochRecord rec;
    score(rec);
    rec.improved = true;
    rec.seconds = std::chrono::duration<double>(clock::now() - t0).count();
    result.best = params;
    result.best_val = rec.val_metric;
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = clock::now();
    EpochRecord rec;
    rec.epoch = epoch;
    Phase current = Phase::f;
    try {
      const PhaseSummary i = train_phase(model, params, data, Phase::f, cfg, rng, optimizers);
      rec.loss_h = i.mean_loss_h;
      rec.forward_steps += i.forward.accepted + i.forward.rejected;
      rec.adjoint_steps += i.adjoint.accepted + i.adjoint.rejected;
      rec.rhs_evals += i.forward.rhs_evals + i.adjoint.rhs_evals;
      if (!params.g.empty()) {
        current = Phase::g;
        const PhaseSummary ii = train_phase(model, params, data, Phase::g, cfg, rng, optimizers);
        rec.loss_a = ii.mean_loss_a;
        rec.forward_steps += ii.forward.accepted + ii.forward.rejected;
        rec.adjoint_steps += ii.adjoint.accepted + ii.adjoint.rejected;
        rec.rhs_evals += ii.forward.rhs_evals + ii.adjoint.rhs_evals;
      }
      score(rec);
    } catch (const ConfigError&) {
      throw;
    } catch (const DataError&) {
      throw;
    } catch (const Error& e) {
      throw TrainingError("training aborted at epoch " + std::to_string(epoch) + ", phase " +
                          (current == Phase::f ? "(i) theta_f" : "(ii) theta_g") + ": " + e.what());
    }
    if (!std::isfinite(rec.val_metric)) {
      throw TrainingError("training aborted at epoch " + std::to_string(epoch) + ": non-finite validation metric");
    }
    if (model.better(rec.val_metric, result.best_val)) {
      rec.improved = true;
      result.best = params;
      result.best_val = rec.val_metric;
      result.best_epoch = epoch;
    }
    rec.seconds = std::chrono::duration<double>(clock::now() - t0).count();
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  result.last = std::move(params);
  return result;
}

}  // namespace ace
