#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "ace/solvers.hpp"
#include "ace/tensor.hpp"

namespace ace {

/// Row-wise argmax, ties going to the lowest class index.
std::vector<int> argmax_rows(const Tensor& logits);
/// Fraction of rows of [N x K] logits whose argmax equals the label.
double accuracy(const Tensor& logits, std::span<const int> labels);
/// Mean squared error over all entries.
double mse(const Tensor& prediction, const Tensor& truth);

struct MseCurve {
  std::vector<double> times;
  std::vector<double> mse;
  double aggregate = 0.0;
};

/// Per-time MSE of two trajectories on the same grid, plus its mean.
MseCurve mse_over_time(const Trajectory& prediction, const Trajectory& truth);
/// Header "t,mse".
void write_curve_csv(const std::filesystem::path& path, const MseCurve& curve);

}  // namespace ace
