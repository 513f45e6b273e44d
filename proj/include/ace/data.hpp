#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ace/tensor.hpp"

namespace ace {

enum class Task { crossing, var_forecast, mnist };

Task parse_task(const std::string& name);
std::string task_name(Task task);

/// Immutable once built. Inputs and targets carry the sample index on axis 0.
struct Dataset {
  Task task = Task::crossing;
  /// crossing [N x 1]; var_forecast windows [N x w x d]; mnist [N x 1 x H x W].
  Tensor inputs;
  /// Regression targets: crossing [N x 1] (+-1), var_forecast [N x d]. Empty for mnist.
  Tensor targets;
  /// Class labels: crossing 0 (target +1) / 1 (target -1); mnist digits. Empty for var_forecast.
  std::vector<int> labels;
  std::vector<std::size_t> train, val, test;
  /// Per-dimension value subtracted from the raw series (var_forecast), taken from the train split.
  std::vector<double> offset;

  std::size_t size() const { return inputs.rank() ? inputs.dim(0) : 0; }
  Shape sample_shape() const;
  /// Splits are disjoint and cover every index; throws DataError otherwise.
  void check_splits() const;
};

/// A gathered subset of a Dataset.
struct Batch {
  Tensor inputs;
  Tensor targets;
  std::vector<int> labels;
  std::size_t size() const { return inputs.dim(0); }
};

Batch gather(const Dataset& data, std::span<const std::size_t> indices);

/// Seeded shuffle into train/val/test with the given fractions (rounded down; train gets the rest).
void assign_random_splits(Dataset& data, double val_fraction, double test_fraction, std::uint64_t seed);

/// n/2 points near -1 labelled toward +1, n/2 near +1 labelled toward -1.
Dataset synth_crossing(std::size_t n, double noise, std::uint64_t seed);

/// x_{t+1} = A x_t + noise * eps, x_0 = 0. Returns the [T x d] series.
Tensor synth_var_series(std::size_t d, std::size_t T, const Tensor& coupling, double noise, std::uint64_t seed);
double spectral_radius(const Tensor& square);
/// Length-w windows predicting the next step; chronological 70/15/15 split; centred by the train mean.
Dataset make_forecast_dataset(const Tensor& series, std::size_t window);
void write_series_csv(const std::filesystem::path& path, const Tensor& series);

/// IDX image/label files, optionally gzip-compressed. Pixels scaled to [0, 1].
/// With `test_split` every item goes to the test split; otherwise the items are shuffled
/// with `seed`, the first `limit` kept (0 keeps all) and split 90/10 into train/val.
Dataset load_idx_images(const std::filesystem::path& images, const std::filesystem::path& labels, std::size_t limit,
                        std::uint64_t seed, bool test_split = false);
/// 2x2 average pooling of every image (28x28 -> 14x14).
Dataset downsample_images(const Dataset& data);

/// Raw bytes of a possibly gzip-compressed file.
std::vector<unsigned char> read_maybe_gzip(const std::filesystem::path& path);

}  // namespace ace
