#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "ace/errors.hpp"
#include "ace/ops.hpp"
#include "ace/training.hpp"
#include "oracles.hpp"

using namespace ace;

namespace {

Batch random_windows(std::size_t n, std::size_t w, std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return {oracle::random_tensor({n, w, d}, rng, -0.8, 0.8), oracle::random_tensor({n, d}, rng, -0.8, 0.8), {}};
}

ModelSpec linear_toy(ModelKind kind) {
  return {.task = Task::var_forecast,
          .kind = kind,
          .input_shape = {3, 2},
          .f_kind = OdeKind::mlp_tanh,
          .f_hidden = std::vector<std::size_t>{},
          .g_hidden = std::vector<std::size_t>{}};
}

double group_error(const ModelParams& a, const ModelParams& b) {
  return std::max({gradient_relative_error(a.f, b.f), gradient_relative_error(a.g, b.g),
                   gradient_relative_error(a.q, b.q), gradient_relative_error(a.others, b.others)});
}

}  // namespace

TEST_CASE("loss_h examples") {
  Tape tape;
  Model reg({.task = Task::var_forecast, .kind = ModelKind::node, .input_shape = {2, 2}});
  Batch b{Tensor({1, 2, 2}), Tensor::matrix({{1, 0}}), {}};
  CHECK(loss_h(reg, tape.constant(Tensor::matrix({{1, 0}})), b).value().item() == 0.0);
  CHECK(loss_h(reg, tape.constant(Tensor::matrix({{0, 2}})), b).value().item() == 2.5);

  Model cls({.task = Task::mnist, .kind = ModelKind::node, .input_shape = {1, 4, 4}, .channels = 2});
  Batch m{Tensor({2, 1, 4, 4}), Tensor(), {3, 9}};
  CHECK(loss_h(cls, tape.constant(Tensor({2, 10})), m).value().item() == doctest::Approx(std::log(10.0)).epsilon(1e-15));
  Batch bad{Tensor({1, 1, 4, 4}), Tensor(), {10}};
  CHECK_THROWS_AS(loss_h(cls, tape.constant(Tensor({1, 10})), bad), DataError);
}

TEST_CASE("loss_a examples") {
  Tape tape;
  Model reg({.task = Task::var_forecast, .kind = ModelKind::node, .input_shape = {2, 2}});
  Batch b{Tensor({1, 2, 2}), Tensor::matrix({{1, 0}}), {}};
  Var pred = tape.constant(Tensor::matrix({{0, 2}}));
  std::vector<Var> theta = {tape.leaf(Tensor::vector({3, -4}))};
  std::vector<Var> zero = {tape.leaf(Tensor::vector({0, 0}))};
  CHECK(loss_a(reg, pred, b, theta, {.lambda = 0.0}).value().item() == 2.5);
  CHECK(loss_a(reg, pred, b, zero, {.lambda = 0.3}).value().item() == 2.5);
  CHECK(loss_a(reg, pred, b, theta, {.lambda = 0.01, .norm = RegNorm::l2_norm}).value().item() ==
        doctest::Approx(2.55).epsilon(1e-15));
  CHECK(loss_a(reg, pred, b, theta, {.lambda = 0.01, .norm = RegNorm::l2}).value().item() ==
        doctest::Approx(2.75).epsilon(1e-15));
  CHECK(loss_a(reg, pred, b, theta, {.lambda = 0.01, .norm = RegNorm::l1}).value().item() ==
        doctest::Approx(2.57).epsilon(1e-15));
  CHECK_THROWS_AS(LossSpec{.lambda = -1}.validate(), ConfigError);
}

TEST_CASE("property: regularizer gradient matches its closed form exactly") {
  std::mt19937_64 rng(1);
  for (RegNorm norm : {RegNorm::l1, RegNorm::l2, RegNorm::l2_norm}) {
    for (int trial = 0; trial < 10; ++trial) {
      ParamStore p;
      p.add("a", oracle::random_tensor({3, 2}, rng));
      p.add("b", oracle::random_tensor({4}, rng));
      p.get("b")[1] = 0.0;
      const LossSpec spec{.lambda = 0.37, .norm = norm};
      Tape tape;
      BoundParams bp(tape, p, true);
      Var reg;
      for (Var v : bp.vars()) {
        Var t = norm == RegNorm::l1 ? abs_sum(v) : square_sum(v);
        reg = reg.valid() ? add(reg, t) : t;
      }
      const ParamStore closed = regularizer_gradient(p, spec);
      const ParamStore fd = finite_difference_oracle([&](const ParamStore& s) { return regularizer(s, spec); }, p);
      if (norm == RegNorm::l1) {
        CHECK(closed.get("b")[1] == 0.0);
        CHECK(closed.get("a")[0] == (p.get("a")[0] > 0 ? 0.37 : -0.37));
      } else {
        CHECK(gradient_relative_error(closed, fd) < 1e-8);
      }
      if (norm == RegNorm::l2) {
        const ParamStore tg = bp.gradients(tape.backward(scale(reg, 0.37)));
        CHECK(tg == closed);
      }
    }
  }
  ParamStore zero;
  zero.add("z", Tensor({3}));
  const ParamStore zg = regularizer_gradient(zero, {.lambda = 1, .norm = RegNorm::l2_norm});
  for (double v : zg.get("z").data()) CHECK(v == 0.0);
}

TEST_CASE("finite_difference_oracle") {
  ParamStore p;
  p.add("theta", Tensor::vector({3.0}));
  auto sq = finite_difference_oracle([](const ParamStore& s) { return s.get("theta")[0] * s.get("theta")[0]; }, p);
  CHECK(std::abs(sq.get("theta")[0] - 6.0) < 1e-6);
  auto flat = finite_difference_oracle([](const ParamStore&) { return 4.2; }, p);
  CHECK(flat.get("theta")[0] == 0.0);
  ParamStore big;
  big.add("w", Tensor({2001}));
  CHECK_THROWS_AS(finite_difference_oracle([](const ParamStore&) { return 0.0; }, big), SizeError);

  // agreement with the tape on a composition of ops
  std::mt19937_64 rng(2);
  ParamStore q;
  q.add("W", oracle::random_tensor({3, 4}, rng));
  q.add("x", oracle::random_tensor({2, 4}, rng));
  auto build = [](Tape& tape, const ParamStore& s, bool diff) {
    BoundParams b(tape, s, diff);
    return std::make_pair(sum(mul(softmax_rows(linear(tanh(b["x"]), b["W"])), sigmoid(linear(b["x"], b["W"])))), b);
  };
  auto fd = finite_difference_oracle(
      [&](const ParamStore& s) {
        Tape t(false);
        return build(t, s, false).first.value().item();
      },
      q);
  Tape t;
  auto [out, bound] = build(t, q, true);
  CHECK(gradient_relative_error(bound.gradients(t.backward(out)), fd) < 1e-6);
}

TEST_CASE("adjoint gradients against both oracles") {
  SolverConfig cfg;
  cfg.rtol = cfg.atol = 1e-8;

  SUBCASE("2-d linear ODE, quadratic loss") {
    Model model(linear_toy(ModelKind::node));
    const ModelParams p = model.init(3);
    const Batch b = random_windows(4, 3, 2, 4);
    const auto adj = grad_theta_f(model, p, b, {}, cfg);
    const auto fd = finite_difference_gradients(model, p, b, Phase::f, {});
    const auto tp = tape_gradients(model, p, b, Phase::f, {}, Method::rk4, 1e-3);
    CHECK(gradient_relative_error(adj.grad.f, fd.f) < 1e-4);
    CHECK(gradient_relative_error(adj.grad.f, tp.grad.f) < 1e-3);
    CHECK(adj.loss_h == doctest::Approx(tp.loss_h).epsilon(1e-6));
  }
  SUBCASE("coupled pairwise toy: theta_f and theta_g") {
    Model model(linear_toy(ModelKind::ace_pairwise));
    const ModelParams p = model.init(5);
    const Batch b = random_windows(3, 3, 2, 6);
    const LossSpec loss{.lambda = 0.01};
    for (Phase phase : {Phase::f, Phase::g}) {
      const auto adj = adjoint_gradients(model, p, b, phase, loss, cfg);
      const auto fd = finite_difference_gradients(model, p, b, phase, loss);
      const auto tp = tape_gradients(model, p, b, phase, loss, Method::rk4, 1e-3);
      CHECK(group_error(adj.grad, fd) < 1e-4);
      CHECK(group_error(adj.grad, tp.grad) < 1e-3);
      CHECK(group_error(tp.grad, fd) < 1e-3);
    }
  }
  SUBCASE("phase g with the task loss detached is the pure regularizer") {
    Model model(linear_toy(ModelKind::ace_pairwise));
    ModelParams p = model.init(5);
    // f = 0 and a target equal to h(0): the task loss does not depend on theta_g
    for (auto& [name, t] : p.f.entries()) t = Tensor(t.shape());
    Batch b = random_windows(2, 3, 2, 7);
    for (std::size_t i = 0; i < 2; ++i) {
      for (std::size_t j = 0; j < 2; ++j) b.targets.at(i, j) = b.inputs[(i * 3 + 2) * 2 + j];
    }
    const LossSpec loss{.lambda = 0.05, .norm = RegNorm::l1};
    const auto adj = grad_theta_g(model, p, b, loss, cfg);
    CHECK(adj.loss_h == 0.0);
    CHECK(adj.grad.g == regularizer_gradient(p.g, loss));
  }
  SUBCASE("crossing ACE toy including theta_q") {
    Model model({.task = Task::crossing, .kind = ModelKind::ace_elementwise, .input_shape = {1}, .hidden = 3});
    const ModelParams p = model.init(8);
    auto data = synth_crossing(6, 0.1, 9);
    std::vector<std::size_t> all = {0, 1, 2, 3, 4, 5};
    const Batch b = gather(data, all);
    const GradcheckReport r = gradient_check(model, p, b, {.lambda = 1e-3}, cfg);
    CHECK(r.pass);
    CHECK(r.rows.size() == 3);
    GradientOptions corrupt;
    corrupt.corrupt_adjoint_sign = true;
    CHECK_FALSE(gradient_check(model, p, b, {.lambda = 1e-3}, cfg, corrupt).pass);
  }
  SUBCASE("tiny image model: tape matches central differences of the same rk4 map") {
    // adaptive steps make FD noisy here (instance-style norm over 16 pixels is stiff), so the
    // fixed-step map is the reference
    Model model({.task = Task::mnist, .kind = ModelKind::ace_elementwise, .input_shape = {1, 4, 4}, .channels = 2,
                 .classes = 3});
    const ModelParams p = model.init(10);
    std::mt19937_64 rng(11);
    const Batch b{oracle::random_tensor({2, 1, 4, 4}, rng, 0, 1), Tensor(), {0, 2}};
    SolverConfig rk;
    rk.method = Method::rk4;
    rk.step_size = 1e-2;
    const GradientResult tape = tape_gradients(model, p, b, Phase::f, {}, Method::rk4, 1e-2);
    const auto fd_store = [&](ParamStore ModelParams::*store) {
      return finite_difference_oracle(
          [&](const ParamStore& s) {
            ModelParams q = p;
            q.*store = s;
            return phase_loss(model, q, b, Phase::f, {}, rk);
          },
          p.*store);
    };
    CHECK(gradient_relative_error(tape.grad.q, fd_store(&ModelParams::q)) < 1e-5);
    CHECK(gradient_relative_error(tape.grad.f, fd_store(&ModelParams::f)) < 1e-4);
    CHECK(gradient_relative_error(tape.grad.others, fd_store(&ModelParams::others)) < 1e-4);
  }
  SUBCASE("tiny image model: adjoint matches a converged tape") {
    Model model({.task = Task::mnist, .kind = ModelKind::ace_elementwise, .input_shape = {1, 8, 8}, .channels = 4,
                 .classes = 3});
    const ModelParams p = model.init(10);
    std::mt19937_64 rng(11);
    const Batch b{oracle::random_tensor({2, 1, 8, 8}, rng, 0, 1), Tensor(), {0, 2}};
    SolverConfig tight;
    tight.rtol = tight.atol = 1e-10;
    const GradientResult adj = adjoint_gradients(model, p, b, Phase::f, {}, tight);
    const GradientResult tape = tape_gradients(model, p, b, Phase::f, {}, Method::rk4, 5e-4);
    CHECK(gradient_relative_error(adj.grad.f, tape.grad.f) < 1e-3);
    CHECK(gradient_relative_error(adj.grad.q, tape.grad.q) < 1e-3);
    CHECK(gradient_relative_error(adj.grad.others, tape.grad.others) < 1e-3);
    const GradientResult adj_g = adjoint_gradients(model, p, b, Phase::g, {.lambda = 1e-3}, tight);
    const GradientResult tape_g = tape_gradients(model, p, b, Phase::g, {.lambda = 1e-3}, Method::rk4, 5e-4);
    CHECK(gradient_relative_error(adj_g.grad.g, tape_g.grad.g) < 1e-3);
  }
  SUBCASE("zero-parameter model is vacuous") {
    ModelSpec s = linear_toy(ModelKind::node);
    s.f_kind = OdeKind::zero;
    Model model(s);
    const GradcheckReport r = gradient_check(model, model.init(1), random_windows(2, 3, 2, 1), {}, cfg);
    CHECK(r.vacuous);
    CHECK(r.pass);
  }
}

TEST_CASE("property: gradients are linear in the loss") {
  Model model(linear_toy(ModelKind::ace_pairwise));
  const ModelParams p = model.init(12);
  const Batch b = random_windows(3, 3, 2, 13);
  // fixed steps: an adaptive controller would see the scaled adjoint and pick other steps
  SolverConfig cfg;
  cfg.method = Method::rk4;
  cfg.step_size = 0.01;
  for (Phase phase : {Phase::f, Phase::g}) {
    const auto one = adjoint_gradients(model, p, b, phase, {.lambda = 0.02}, cfg);
    GradientOptions twice;
    twice.loss_scale = 2.0;
    const auto two = adjoint_gradients(model, p, b, phase, {.lambda = 0.02}, cfg, twice);
    const auto a = one.grad.merged().flatten(), c = two.grad.merged().flatten();
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(c[i] - 2 * a[i]) / std::max(std::abs(2 * a[i]), 1e-300));
    CHECK(worst <= 1e-12);
  }
}

TEST_CASE("adjoint errors carry the phase tag") {
  Model model(linear_toy(ModelKind::ace_pairwise));
  ModelParams p = model.init(14);
  SolverConfig cfg;
  cfg.max_steps = 3;
  cfg.initial_step = 0.5;
  cfg.rtol = cfg.atol = 1e-12;
  // the forward pass alone is cheap enough to pass with a loose budget
  try {
    adjoint_gradients(model, p, random_windows(2, 3, 2, 1), Phase::g, {}, cfg);
    FAIL("expected a solver error");
  } catch (const BudgetError& e) {
    CHECK(std::string(e.what()).find("forward") != std::string::npos);
  }
  // grow the weights so that the adjoint needs more steps than the forward pass
  SolverConfig loose;
  loose.rtol = loose.atol = 1e-3;
  loose.min_step = 0.2;
  for (auto& [name, t] : p.g.entries()) {
    for (auto& v : t.data()) v *= 40;
  }
  bool tagged = false;
  try {
    adjoint_gradients(model, p, random_windows(2, 3, 2, 1), Phase::g, {}, loose);
  } catch (const StepUnderflow& e) {
    tagged = std::string(e.what()).find("adjoint-g") != std::string::npos ||
             std::string(e.what()).find("forward") != std::string::npos;
  }
  CHECK(tagged);
}

TEST_CASE("Adam") {
  ParamStore p;
  p.add("x", Tensor::vector({1.0, -2.0}));
  Adam opt(0.1);
  ParamStore g = p;
  opt.step(p, g);
  // the first step moves each coordinate by lr against the gradient sign
  CHECK(p.get("x")[0] == doctest::Approx(0.9).epsilon(1e-9));
  CHECK(p.get("x")[1] == doctest::Approx(-1.9).epsilon(1e-9));
  for (int i = 0; i < 500; ++i) opt.step(p, p);
  CHECK(std::abs(p.get("x")[0]) < 0.05);
  CHECK_THROWS_AS(Adam(0.0), ConfigError);
}

namespace {

Dataset toy_regression(std::uint64_t seed) {
  Tensor A = Tensor::matrix({{0.6, 0.3}, {-0.2, 0.5}});
  Tensor s = synth_var_series(2, 120, A, 0.1, seed);
  return make_forecast_dataset(s, 3);
}

}  // namespace

TEST_CASE("training loop") {
  const Dataset data = toy_regression(15);
  Model model(linear_toy(ModelKind::ace_pairwise));
  TrainConfig cfg;
  cfg.batch_size = 16;
  cfg.lr = 1e-2;
  cfg.seed = 3;
  cfg.loss.lambda = 1e-3;

  SUBCASE("max_iter = 0 returns the initial parameters") {
    cfg.epochs = 0;
    const ModelParams init = model.init(1);
    const TrainResult r = train(model, init, data, cfg);
    CHECK(r.best == init);
    CHECK(r.history.size() == 1);
  }
  SUBCASE("training loss decreases over the first five iterations") {
    cfg.epochs = 5;
    const TrainResult r = train(model, model.init(1), data, cfg);
    for (int k = 2; k <= 5; ++k) CHECK(*r.history[k].loss_h < *r.history[k - 1].loss_h);
  }
  SUBCASE("alternation freezes the other store bitwise") {
    ModelParams p = model.init(2);
    std::mt19937_64 rng(4);
    std::vector<Adam> opt(4, Adam(cfg.lr));
    const ModelParams before = p;
    train_phase(model, p, data, Phase::f, cfg, rng, opt);
    CHECK(p.g == before.g);
    CHECK(p.f != before.f);
    const ModelParams mid = p;
    train_phase(model, p, data, Phase::g, cfg, rng, opt);
    CHECK(p.f == mid.f);
    CHECK(p.q == mid.q);
    CHECK(p.others == mid.others);
    CHECK(p.g != mid.g);
  }
  SUBCASE("checkpoint dominance and determinism") {
    cfg.epochs = 4;
    const TrainResult r = train(model, model.init(1), data, cfg);
    for (const auto& rec : r.history) CHECK(r.best_val <= rec.val_metric);
    CHECK(evaluate_split(model, r.best, data, data.val, cfg.batch_size, cfg.solver).metric == r.best_val);
    const TrainResult again = train(model, model.init(1), data, cfg);
    CHECK(again.best == r.best);
    for (std::size_t k = 0; k < r.history.size(); ++k) {
      CHECK(again.history[k].loss_h == r.history[k].loss_h);
      CHECK(again.history[k].val_metric == r.history[k].val_metric);
    }
  }
  SUBCASE("solver failure aborts with context") {
    cfg.epochs = 1;
    cfg.solver.max_steps = 1;
    try {
      train(model, model.init(1), data, cfg);
      FAIL("expected a training error");
    } catch (const TrainingError& e) {
      CHECK(std::string(e.what()).find("epoch 1") != std::string::npos);
    } catch (const BudgetError&) {
      // the initial validation pass already exceeds the budget
    }
  }
  SUBCASE("mismatched parameters") {
    Model other(linear_toy(ModelKind::node));
    CHECK_THROWS_AS(train(model, other.init(1), data, cfg), ConfigError);
  }
}

TEST_CASE("model parameter bookkeeping") {
  for (ModelKind k : {ModelKind::node, ModelKind::augmented_node, ModelKind::ace_pairwise, ModelKind::ace_elementwise,
                      ModelKind::fixed_corr, ModelKind::fc_init}) {
    Model m({.task = Task::var_forecast, .kind = k, .input_shape = {6, 5}});
    const ModelParams p = m.init(1);
    CHECK(p.size() == m.parameter_count());
    CHECK(ModelParams::split(p.merged()) == p);
  }
  Model img({.task = Task::mnist, .kind = ModelKind::ace_elementwise, .input_shape = {1, 14, 14}, .channels = 8});
  CHECK(img.init(1).size() == img.parameter_count());
  CHECK_THROWS_AS(Model({.task = Task::mnist, .kind = ModelKind::ace_pairwise, .input_shape = {1, 14, 14}}), ConfigError);
  CHECK_THROWS_AS(Model({.task = Task::crossing, .kind = ModelKind::fixed_corr, .input_shape = {1}}), ConfigError);
}
