#include "ace/metrics.hpp"

#include <fstream>

#include "ace/errors.hpp"

namespace ace {

std::vector<int> argmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) throw DimensionError("logits must be [N x K], got " + shape_string(logits.shape()));
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j) {
      if (logits.at(i, j) > logits.at(i, best)) best = j;
    }
    out[i] = static_cast<int>(best);
  }
  return out;
}

double accuracy(const Tensor& logits, std::span<const int> labels) {
  if (labels.empty()) throw UsageError("accuracy of an empty set");
  const auto pred = argmax_rows(logits);
  if (pred.size() != labels.size()) {
    throw DimensionError(std::to_string(pred.size()) + " logit rows for " + std::to_string(labels.size()) + " labels");
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

double mse(const Tensor& prediction, const Tensor& truth) {
  if (prediction.shape() != truth.shape()) {
    throw DimensionError("mse of " + shape_string(prediction.shape()) + " against " + shape_string(truth.shape()));
  }
  if (prediction.empty()) throw UsageError("mse of an empty set");
  double s = 0.0;
  for (std::size_t i = 0; i < prediction.size(); ++i) {
    const double e = prediction[i] - truth[i];
    s += e * e;
  }
  return s / static_cast<double>(prediction.size());
}

MseCurve mse_over_time(const Trajectory& prediction, const Trajectory& truth) {
  if (prediction.times != truth.times || prediction.states.size() != prediction.times.size() ||
      truth.states.size() != truth.times.size()) {
    throw AlignmentError("trajectories are not on the same time grid");
  }
  if (prediction.times.empty()) throw UsageError("mse over an empty trajectory");
  MseCurve c;
  c.times = prediction.times;
  for (std::size_t k = 0; k < prediction.times.size(); ++k) {
    const auto& p = prediction.states[k];
    const auto& q = truth.states[k];
    if (p.size() != q.size() || p.empty()) throw AlignmentError("state sizes differ at t=" + std::to_string(c.times[k]));
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) s += (p[i] - q[i]) * (p[i] - q[i]);
    c.mse.push_back(s / static_cast<double>(p.size()));
    c.aggregate += c.mse.back();
  }
  c.aggregate /= static_cast<double>(c.mse.size());
  return c;
}

void write_curve_csv(const std::filesystem::path& path, const MseCurve& curve) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out.precision(17);
  out << "t,mse\n";
  for (std::size_t k = 0; k < curve.times.size(); ++k) out << curve.times[k] << "," << curve.mse[k] << "\n";
}

}  // namespace ace
