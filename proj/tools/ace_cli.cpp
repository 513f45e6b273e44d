// ace: train, evaluate and gradient-check co-evolving ODE models.
//
// Exit codes: 0 success, 2 configuration or data error, 3 numerical or training failure.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "ace/checkpoint.hpp"
#include "ace/config.hpp"
#include "ace/errors.hpp"
#include "ace/runner.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace ace;

namespace {

constexpr int kOk = 0;
constexpr int kConfig = 2;
constexpr int kNumeric = 3;

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

RunConfig config_from(const fs::path& path, std::string& text) {
  text = read_text(path);
  try {
    return parse_config(text);
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

int cmd_train(const fs::path& config_path) {
  std::string text;
  const RunConfig cfg = config_from(config_path, text);
  const RunOutput out = run_training(cfg, text, std::cout);
  std::cout << out.dir.string() << '\n';
  return kOk;
}

int cmd_eval(const fs::path& checkpoint, const fs::path& config_path, const std::string& split_name,
             fs::path out_path) {
  std::string text;
  const RunConfig cfg = config_from(config_path, text);
  if (!fs::exists(checkpoint)) throw ConfigError("checkpoint " + checkpoint.string() + " does not exist");
  const Dataset data = build_dataset(cfg);
  const Model model(model_spec(cfg, data));
  const ModelParams params = ModelParams::split(load_checkpoint(checkpoint));
  model.check_params(params);

  const std::vector<std::size_t>* split = nullptr;
  if (split_name == "train") split = &data.train;
  if (split_name == "val") split = &data.val;
  if (split_name == "test") split = &data.test;
  if (!split) throw ConfigError("split must be train, val or test, got '" + split_name + "'");
  if (split->empty()) throw DataError("the " + split_name + " split is empty");

  const SplitScore s = evaluate_split(model, params, data, *split, cfg.training.batch_size, cfg.training.solver);
  if (out_path.empty()) out_path = checkpoint.parent_path() / ("eval-" + split_name + ".json");
  nlohmann::ordered_json report;
  report["name"] = model.classification() ? "accuracy" : "mse";
  report["value"] = s.metric;
  report["n"] = split->size();
  report["split"] = split_name;
  report["checkpoint"] = checkpoint.filename().string();
  std::ofstream(out_path, std::ios::binary) << report.dump(2) << '\n';
  std::cout << split_name << ' ' << report["name"].get<std::string>() << ' ' << std::setprecision(10) << s.metric
            << " (n=" << split->size() << ")\n";
  if (cfg.task == Task::var_forecast) {
    fs::path curve = out_path;
    curve.replace_extension(".csv");
    write_curve_csv(curve, forecast_curve(model, params, data, *split, cfg));
    std::cout << "curve " << curve.string() << '\n';
  }
  return kOk;
}

int cmd_gradcheck(const fs::path& config_path, bool corrupt_sign) {
  std::string text;
  const RunConfig cfg = config_from(config_path, text);
  const Dataset data = build_dataset(cfg);
  const Model model(model_spec(cfg, data));
  const std::size_t d = shape_size(model.hidden_shape());
  if (d > 4) {
    throw ConfigError("gradcheck is limited to toy models with state dimension <= 4, this one has " +
                      std::to_string(d));
  }
  const std::size_t n = std::min<std::size_t>({cfg.training.batch_size, data.train.size(), 8});
  const Batch batch = gather(data, std::span(data.train).first(n));
  const ModelParams params = model.init(cfg.training.seed);
  const GradcheckReport r = gradient_check(model, params, batch, cfg.training.loss, cfg.training.solver,
                                           {.corrupt_adjoint_sign = corrupt_sign});
  if (r.vacuous) {
    std::cout << "warning: the model has no trainable parameters; the check is vacuous\n";
  }
  std::cout << std::left << std::setw(14) << "group" << std::setw(8) << "size" << std::setw(16) << "adjoint/fd"
            << std::setw(16) << "adjoint/tape" << "tape/fd\n";
  for (const GradcheckRow& row : r.rows) {
    std::cout << std::setw(14) << row.group << std::setw(8) << row.size << std::setprecision(3) << std::scientific
              << std::setw(16) << row.adjoint_vs_fd << std::setw(16) << row.adjoint_vs_tape << row.tape_vs_fd
              << std::defaultfloat << '\n';
  }
  std::cout << (r.pass ? "PASS" : "FAIL") << " (tolerance " << r.tolerance << ")\n";
  return r.pass ? kOk : 1;
}

int cmd_demo_crossing(const fs::path& out_dir, int epochs, std::uint64_t seed) {
  fs::create_directories(out_dir);
  std::ofstream table(out_dir / "comparison.csv", std::ios::binary);
  table << "model,parameters,final_train_loss,best_epoch,best_val_accuracy,test_accuracy\n";
  std::cout << std::left << std::setw(18) << "model" << std::setw(8) << "params" << std::setw(14) << "train loss"
            << std::setw(10) << "val acc" << "test acc\n";
  for (const ModelKind kind : {ModelKind::node, ModelKind::augmented_node, ModelKind::ace_elementwise}) {
    RunConfig cfg;
    cfg.task = Task::crossing;
    cfg.model = kind;
    cfg.training.epochs = epochs;
    cfg.training.seed = seed;
    cfg.training.lr = 1e-2;
    cfg.training.loss.lambda = 1e-3;
    cfg.training.solver.rtol = cfg.training.solver.atol = 1e-4;
    cfg.output_dir = out_dir / model_kind_name(kind);
    std::ostringstream log;
    const RunOutput run = run_training(cfg, render_config(cfg), log);
    const auto& last = run.result.history.back();
    const double train_loss = last.loss_h.value_or(std::nan(""));
    table << model_kind_name(kind) << ',' << run.parameters.total << ',' << std::setprecision(10) << train_loss << ','
          << run.result.best_epoch << ',' << run.result.best_val << ',' << run.test_metric.value_or(std::nan(""))
          << '\n';
    std::cout << std::setw(18) << model_kind_name(kind) << std::setw(8) << run.parameters.total << std::setw(14)
              << std::setprecision(4) << train_loss << std::setw(10) << run.result.best_val
              << run.test_metric.value_or(std::nan("")) << '\n';

    // h(t) of evenly spaced inputs, for plotting whether trajectories cross
    const Dataset data = build_dataset(cfg);
    const Model model(model_spec(cfg, data));
    const std::size_t n = 21;
    Batch grid{Tensor({n, 1}), Tensor({n, 1}), std::vector<int>(n, 0)};
    for (std::size_t i = 0; i < n; ++i) grid.inputs[i] = -1.2 + 2.4 * static_cast<double>(i) / (n - 1);
    write_state_trajectories(out_dir / (model_kind_name(kind) + "_trajectories.csv"), model, run.result.best, grid,
                             cfg.training.solver);
  }
  std::cout << "wrote " << (out_dir / "comparison.csv").string() << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attentive co-evolving neural ODEs"};
  app.require_subcommand(1);

  fs::path config_path;
  auto* train = app.add_subcommand("train", "train a model described by a config file");
  train->add_option("config", config_path, "config file")->required();

  fs::path checkpoint, eval_out;
  std::string split = "test";
  auto* eval = app.add_subcommand("eval", "score a checkpoint on one split");
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  eval->add_option("--config", config_path, "config the checkpoint was trained with")->required();
  eval->add_option("--split", split, "train, val or test")->capture_default_str();
  eval->add_option("--out", eval_out, "report path (default: next to the checkpoint)");

  bool corrupt = false;
  auto* gradcheck = app.add_subcommand("gradcheck", "compare adjoint, tape and finite-difference gradients");
  gradcheck->add_option("config", config_path, "config file")->required();
  gradcheck->add_flag("--corrupt-adjoint-sign", corrupt, "negate the adjoint parameter integrand (test fixture)");

  fs::path demo_out = "runs/demo-crossing";
  int demo_epochs = 200;
  std::uint64_t demo_seed = 0;
  auto* demo = app.add_subcommand("demo-crossing", "node vs augmented node vs ACE on the crossing task");
  demo->add_option("--out", demo_out, "output directory")->capture_default_str();
  demo->add_option("--epochs", demo_epochs, "epochs per model")->capture_default_str();
  demo->add_option("--seed", demo_seed, "seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*train) return cmd_train(config_path);
    if (*eval) return cmd_eval(checkpoint, config_path, split, eval_out);
    if (*gradcheck) return cmd_gradcheck(config_path, corrupt);
    if (*demo) return cmd_demo_crossing(demo_out, demo_epochs, demo_seed);
  } catch (const TrainingError& e) {
    std::cerr << "training failed: " << e.what() << '\n';
    return kNumeric;
  } catch (const NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNumeric;
  } catch (const StepUnderflow& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNumeric;
  } catch (const BudgetError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNumeric;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kConfig;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kConfig;
  }
  return kConfig;
}
