#include "ace/runner.hpp"

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "ace/checkpoint.hpp"
#include "ace/errors.hpp"
#include "json.hpp"

namespace ace {

namespace {

using ordered_json = nlohmann::ordered_json;

// Appends `extra` after `base`; the extra items become the test split.
Dataset append_test(const Dataset& base, const Dataset& extra) {
  if (base.sample_shape() != extra.sample_shape()) {
    throw DataError("held-out images " + shape_string(extra.sample_shape()) + " do not match training images " +
                    shape_string(base.sample_shape()));
  }
  Dataset d = base;
  Shape s = base.inputs.shape();
  s[0] = base.size() + extra.size();
  std::vector<double> values(base.inputs.data().begin(), base.inputs.data().end());
  values.insert(values.end(), extra.inputs.data().begin(), extra.inputs.data().end());
  d.inputs = Tensor(s, std::move(values));
  d.labels.insert(d.labels.end(), extra.labels.begin(), extra.labels.end());
  d.test.clear();
  for (std::size_t i = 0; i < extra.size(); ++i) d.test.push_back(base.size() + i);
  return d;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

}  // namespace

Dataset build_dataset(const RunConfig& cfg) {
  const DataConfig& dc = cfg.data;
  const std::uint64_t seed = cfg.training.seed;
  switch (cfg.task) {
    case Task::crossing: {
      Dataset d = synth_crossing(dc.samples, dc.noise, seed);
      assign_random_splits(d, dc.val_fraction, dc.test_fraction, seed);
      return d;
    }
    case Task::var_forecast: {
      const Tensor a = make_coupling(dc.coupling, dc.dims, dc.coupling_scale);
      return make_forecast_dataset(synth_var_series(dc.dims, dc.length, a, dc.series_noise, seed), dc.window);
    }
    case Task::mnist: {
      const auto& dir = dc.mnist_dir;
      Dataset train = load_idx_images(dir / "train-images-idx3-ubyte.gz", dir / "train-labels-idx1-ubyte.gz",
                                      dc.train_limit, seed);
      Dataset test = load_idx_images(dir / "t10k-images-idx3-ubyte.gz", dir / "t10k-labels-idx1-ubyte.gz",
                                     dc.test_limit, seed, true);
      if (dc.downsample) {
        train = downsample_images(train);
        test = downsample_images(test);
      }
      Dataset d = append_test(train, test);
      d.check_splits();
      return d;
    }
  }
  throw ConfigError("unknown task");
}

ModelSpec model_spec(const RunConfig& cfg, const Dataset& data) {
  return {.task = cfg.task,
          .kind = cfg.model,
          .input_shape = data.sample_shape(),
          .hidden = cfg.hidden,
          .augment = cfg.augment,
          .channels = cfg.channels,
          .classes = 10};
}

std::filesystem::path next_run_dir(const std::filesystem::path& base) {
  std::filesystem::create_directories(base);
  for (int i = 0; i < 100000; ++i) {
    char name[16];
    std::snprintf(name, sizeof name, "run-%03d", i);
    const auto dir = base / name;
    // create_directory is false when it already exists, so runs are never overwritten
    if (std::filesystem::create_directory(dir)) return dir;
  }
  throw ConfigError("no free run directory under " + base.string());
}

std::string metrics_line(const EpochRecord& r) {
  ordered_json j;
  j["epoch"] = r.epoch;
  j["loss_h"] = r.loss_h ? ordered_json(*r.loss_h) : ordered_json(nullptr);
  j["loss_a"] = r.loss_a ? ordered_json(*r.loss_a) : ordered_json(nullptr);
  j["val_metric"] = r.val_metric;
  j["test_metric"] = r.test_metric ? ordered_json(*r.test_metric) : ordered_json(nullptr);
  j["improved"] = r.improved;
  j["forward_steps"] = r.forward_steps;
  j["adjoint_steps"] = r.adjoint_steps;
  j["rhs_evals"] = r.rhs_evals;
  return j.dump();
}

std::string timing_line(const EpochRecord& r) {
  ordered_json j;
  j["epoch"] = r.epoch;
  j["seconds"] = r.seconds;
  return j.dump();
}

ParameterReport parameter_report(const ModelParams& p) {
  return {p.f.size(), p.g.size(), p.q.size(), p.others.size(), p.size()};
}

RunOutput run_training(const RunConfig& cfg, const std::string& config_text, std::ostream& log) {
  cfg.validate();
  const Dataset data = build_dataset(cfg);
  const Model model(model_spec(cfg, data));
  const ModelParams init = model.init(cfg.training.seed);

  RunOutput out;
  out.dir = next_run_dir(cfg.output_dir);
  out.parameters = parameter_report(init);
  write_text(out.dir / "config.ini", config_text);
  write_text(out.dir / "resolved.ini", render_config(cfg));

  std::ofstream metrics(out.dir / "metrics.jsonl", std::ios::binary);
  std::ofstream timing(out.dir / "timing.jsonl", std::ios::binary);
  log << "run " << out.dir.string() << ": " << task_name(cfg.task) << " / " << model_kind_name(cfg.model) << ", "
      << out.parameters.total << " parameters\n";
  out.result = train(model, init, data, cfg.training, [&](const EpochRecord& r) {
    metrics << metrics_line(r) << '\n' << std::flush;
    timing << timing_line(r) << '\n' << std::flush;
    log << "epoch " << r.epoch << " val " << r.val_metric;
    if (r.loss_h) log << " L_h " << *r.loss_h;
    if (r.loss_a) log << " L_a " << *r.loss_a;
    if (r.test_metric) log << " test " << *r.test_metric;
    log << (r.improved ? " *" : "") << std::fixed << std::setprecision(1) << " (" << r.seconds << "s)"
        << std::defaultfloat << std::setprecision(6) << '\n'
        << std::flush;
  });
  save_checkpoint(out.dir / "best.ckpt", out.result.best.merged());

  if (!data.test.empty()) {
    out.test_metric =
        evaluate_split(model, out.result.best, data, data.test, cfg.training.batch_size, cfg.training.solver).metric;
  }
  ordered_json report;
  report["task"] = task_name(cfg.task);
  report["model"] = model_kind_name(cfg.model);
  report["metric"] = model.classification() ? "accuracy" : "mse";
  report["parameters"] = {{"theta_f", out.parameters.f},
                          {"theta_g", out.parameters.g},
                          {"theta_q", out.parameters.q},
                          {"others", out.parameters.others},
                          {"total", out.parameters.total}};
  report["epochs"] = cfg.training.epochs;
  report["best_epoch"] = out.result.best_epoch;
  report["best_val"] = out.result.best_val;
  report["test_metric"] = out.test_metric ? ordered_json(*out.test_metric) : ordered_json(nullptr);
  report["checkpoint"] = "best.ckpt";
  write_text(out.dir / "report.json", report.dump(2) + "\n");
  if (cfg.task == Task::var_forecast && !data.test.empty()) {
    write_curve_csv(out.dir / "test_curve.csv", forecast_curve(model, out.result.best, data, data.test, cfg));
  }
  log << "best epoch " << out.result.best_epoch << " val " << out.result.best_val;
  if (out.test_metric) log << " test " << *out.test_metric;
  log << '\n';
  return out;
}

MseCurve forecast_curve(const Model& model, const ModelParams& params, const Dataset& data,
                        const std::vector<std::size_t>& indices, const RunConfig& cfg) {
  if (data.task != Task::var_forecast) throw UsageError("error curves are defined for forecasting tasks");
  const SplitScore s = evaluate_split(model, params, data, indices, cfg.training.batch_size, cfg.training.solver);
  const Batch truth = gather(data, indices);
  const std::size_t d = truth.targets.dim(1);
  const std::size_t window = data.sample_shape()[0];
  Trajectory pred, real;
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const double t = static_cast<double>(indices[k] + window);
    pred.times.push_back(t);
    real.times.push_back(t);
    pred.states.emplace_back(s.predictions.data().begin() + k * d, s.predictions.data().begin() + (k + 1) * d);
    real.states.emplace_back(truth.targets.data().begin() + k * d, truth.targets.data().begin() + (k + 1) * d);
  }
  return mse_over_time(pred, real);
}

void write_state_trajectories(const std::filesystem::path& path, const Model& model, const ModelParams& params,
                              const Batch& batch, const SolverConfig& cfg) {
  const std::size_t B = batch.size();
  const CoupledSystem sys = model.system(B);
  Tape tape(false);
  BoundParams others(tape, params.others, false), q(tape, params.q, false);
  const Var z0 = model.initial_state(others, q, tape, batch);
  const Solution sol = integrate(numeric_rhs(sys, params.f, params.g), z0.value().values(), 0.0, 1.0, cfg, true,
                                 "forward");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "t,sample,component,h\n";
  out << std::setprecision(10);
  const std::size_t per = sys.h_size() / B;
  for (std::size_t k = 0; k < sol.trajectory.times.size(); ++k) {
    const auto& z = sol.trajectory.states[k];
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t c = 0; c < per; ++c) {
        out << sol.trajectory.times[k] << ',' << b << ',' << c << ',' << z[b * per + c] << '\n';
      }
    }
  }
}

}  // namespace ace
