#pragma once

#include <filesystem>
#include <ostream>
#include <string>

#include "ace/config.hpp"
#include "ace/data.hpp"
#include "ace/metrics.hpp"
#include "ace/model.hpp"
#include "ace/training.hpp"

namespace ace {

/// Builds the dataset the config describes. For mnist the held-out items come from the t10k
/// files and form the test split.
Dataset build_dataset(const RunConfig& cfg);

ModelSpec model_spec(const RunConfig& cfg, const Dataset& data);

/// `base/run-NNN` for the first unused NNN; created on return.
std::filesystem::path next_run_dir(const std::filesystem::path& base);

/// Deterministic per-epoch record (no wall clock).
std::string metrics_line(const EpochRecord& record);
std::string timing_line(const EpochRecord& record);

struct ParameterReport {
  std::size_t f = 0, g = 0, q = 0, others = 0, total = 0;
};
ParameterReport parameter_report(const ModelParams& params);

struct RunOutput {
  std::filesystem::path dir;
  TrainResult result;
  /// Best checkpoint scored on the test split (absent when the split is empty).
  std::optional<double> test_metric;
  ParameterReport parameters;
};

/// Train per `cfg` into a fresh run directory: config.ini (the text as given), resolved.ini,
/// metrics.jsonl, timing.jsonl, best.ckpt, report.json. `log` gets one line per epoch.
RunOutput run_training(const RunConfig& cfg, const std::string& config_text, std::ostream& log);

/// Per-time test MSE of a forecaster over the chronological samples of `indices`; the time of a
/// sample is the series row it predicts.
MseCurve forecast_curve(const Model& model, const ModelParams& params, const Dataset& data,
                        const std::vector<std::size_t>& indices, const RunConfig& cfg);

/// Recorded h(t) of every sample in `batch`, one CSV row per (t, sample, h component).
void write_state_trajectories(const std::filesystem::path& path, const Model& model, const ModelParams& params,
                              const Batch& batch, const SolverConfig& cfg);

}  // namespace ace
