#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "ace/data.hpp"
#include "ace/model.hpp"
#include "ace/solvers.hpp"
#include "ace/training.hpp"

namespace ace {

struct DataConfig {
  // crossing
  std::size_t samples = 200;
  double noise = 0.05;
  double val_fraction = 0.2;
  double test_fraction = 0.2;
  // var_forecast
  std::size_t dims = 5;
  std::size_t length = 2000;
  std::size_t window = 20;
  /// ring | cycle | diagonal | zero
  std::string coupling = "ring";
  double coupling_scale = 0.9;
  double series_noise = 0.1;
  // mnist
  std::filesystem::path mnist_dir = "data/mnist-subset";
  std::size_t train_limit = 5000;
  std::size_t test_limit = 1000;
  bool downsample = true;
};

/// Everything one run needs. Every field has a default.
struct RunConfig {
  Task task = Task::crossing;
  ModelKind model = ModelKind::node;
  std::size_t hidden = 16;
  std::size_t augment = 5;
  std::size_t channels = 8;
  TrainConfig training;
  DataConfig data;
  std::filesystem::path output_dir = "runs";

  /// Cross-field checks; throws ConfigError.
  void validate() const;
};

/// key = value lines under [run], [model], [solver], [training] and [data]; '#' starts a comment.
/// Unknown sections or keys and malformed values throw ConfigError naming the line.
RunConfig parse_config(std::string_view text);
RunConfig load_config(const std::filesystem::path& path);
/// Every field with its resolved value, in the same format parse_config reads.
std::string render_config(const RunConfig& cfg);

/// Coupling matrix of the synthetic VAR series: ring (self 0.5, both neighbours 0.2, scaled
/// to spectral radius `scale`), cycle (x_i <- scale * x_{i+1}), diagonal (scale * I) or zero.
Tensor make_coupling(const std::string& kind, std::size_t d, double scale);

}  // namespace ace
