#include "ace/data.hpp"

#include <zlib.h>

#include <Eigen/Dense>
#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>

#include "ace/errors.hpp"

namespace ace {

Task parse_task(const std::string& name) {
  if (name == "crossing") return Task::crossing;
  if (name == "var_forecast") return Task::var_forecast;
  if (name == "mnist") return Task::mnist;
  throw ConfigError("unknown task '" + name + "'");
}

std::string task_name(Task task) {
  switch (task) {
    case Task::crossing: return "crossing";
    case Task::var_forecast: return "var_forecast";
    case Task::mnist: return "mnist";
  }
  return "?";
}

Shape Dataset::sample_shape() const { return Shape(inputs.shape().begin() + 1, inputs.shape().end()); }

void Dataset::check_splits() const {
  std::vector<int> seen(size(), 0);
  for (const auto* split : {&train, &val, &test}) {
    for (std::size_t i : *split) {
      if (i >= size()) throw DataError("split index " + std::to_string(i) + " out of range");
      ++seen[i];
    }
  }
  for (std::size_t i = 0; i < seen.size(); ++i) {
    if (seen[i] != 1) throw DataError("index " + std::to_string(i) + " appears in " + std::to_string(seen[i]) + " splits");
  }
}

Batch gather(const Dataset& data, std::span<const std::size_t> indices) {
  if (indices.empty()) throw UsageError("empty batch");
  auto take = [&](const Tensor& src) {
    if (src.empty()) return Tensor();
    const std::size_t row = src.size() / src.dim(0);
    Shape s = src.shape();
    s[0] = indices.size();
    std::vector<double> out;
    out.reserve(indices.size() * row);
    for (std::size_t i : indices) {
      if (i >= src.dim(0)) throw DataError("sample index " + std::to_string(i) + " out of range");
      out.insert(out.end(), src.data().begin() + i * row, src.data().begin() + (i + 1) * row);
    }
    return Tensor(s, std::move(out));
  };
  Batch b{take(data.inputs), take(data.targets), {}};
  if (!data.labels.empty()) {
    for (std::size_t i : indices) b.labels.push_back(data.labels.at(i));
  }
  return b;
}

void assign_random_splits(Dataset& data, double val_fraction, double test_fraction, std::uint64_t seed) {
  if (val_fraction < 0 || test_fraction < 0 || val_fraction + test_fraction >= 1) {
    throw ConfigError("split fractions must be non-negative and leave a training split");
  }
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto n_val = static_cast<std::size_t>(val_fraction * static_cast<double>(idx.size()));
  const auto n_test = static_cast<std::size_t>(test_fraction * static_cast<double>(idx.size()));
  data.val.assign(idx.begin(), idx.begin() + n_val);
  data.test.assign(idx.begin() + n_val, idx.begin() + n_val + n_test);
  data.train.assign(idx.begin() + n_val + n_test, idx.end());
  if (data.train.empty()) throw DataError("training split is empty");
}

Dataset synth_crossing(std::size_t n, double noise, std::uint64_t seed) {
  if (n == 0 || n % 2) throw ConfigError("crossing needs a positive even sample count");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> jitter(0.0, 1.0);
  Dataset d;
  d.task = Task::crossing;
  d.inputs = Tensor({n, 1});
  d.targets = Tensor({n, 1});
  for (std::size_t i = 0; i < n; ++i) {
    const bool first = i < n / 2;
    d.inputs[i] = (first ? -1.0 : 1.0) + noise * jitter(rng);
    d.targets[i] = first ? 1.0 : -1.0;
    d.labels.push_back(first ? 0 : 1);
  }
  return d;
}

double spectral_radius(const Tensor& square) {
  if (square.rank() != 2 || square.dim(0) != square.dim(1)) {
    throw DimensionError("spectral radius of non-square " + shape_string(square.shape()));
  }
  const auto n = static_cast<Eigen::Index>(square.dim(0));
  Eigen::MatrixXd m(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) m(i, j) = square.at(i, j);
  }
  return m.eigenvalues().cwiseAbs().maxCoeff();
}

Tensor synth_var_series(std::size_t d, std::size_t T, const Tensor& coupling, double noise, std::uint64_t seed) {
  if (coupling.shape() != Shape{d, d}) {
    throw ConfigError("coupling must be " + std::to_string(d) + "x" + std::to_string(d) + ", got " +
                      shape_string(coupling.shape()));
  }
  if (T < 2) throw ConfigError("series length must be at least 2");
  const double rho = spectral_radius(coupling);
  if (!(rho < 1.0)) throw ConfigError("coupling spectral radius " + std::to_string(rho) + " is not below 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> eps(0.0, 1.0);
  Tensor x({T, d});
  for (std::size_t t = 1; t < T; ++t) {
    for (std::size_t i = 0; i < d; ++i) {
      double v = 0.0;
      for (std::size_t j = 0; j < d; ++j) v += coupling.at(i, j) * x.at(t - 1, j);
      x.at(t, i) = v + noise * eps(rng);
    }
  }
  return x;
}

Dataset make_forecast_dataset(const Tensor& series, std::size_t window) {
  if (series.rank() != 2) throw DimensionError("series must be [T x d]");
  const std::size_t T = series.dim(0), d = series.dim(1);
  if (window < 2 || window >= T) throw ConfigError("window must lie in [2, T)");
  const std::size_t n = T - window;
  Dataset ds;
  ds.task = Task::var_forecast;
  const std::size_t n_train = n * 70 / 100, n_val = n * 15 / 100;
  // the last training target is row window + n_train - 1
  ds.offset.assign(d, 0.0);
  const std::size_t rows = window + n_train;
  for (std::size_t t = 0; t < rows; ++t) {
    for (std::size_t j = 0; j < d; ++j) ds.offset[j] += series.at(t, j);
  }
  for (auto& o : ds.offset) o /= static_cast<double>(rows);
  ds.inputs = Tensor({n, window, d});
  ds.targets = Tensor({n, d});
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t r = 0; r < window; ++r) {
      for (std::size_t j = 0; j < d; ++j) ds.inputs[(s * window + r) * d + j] = series.at(s + r, j) - ds.offset[j];
    }
    for (std::size_t j = 0; j < d; ++j) ds.targets.at(s, j) = series.at(s + window, j) - ds.offset[j];
  }
  for (std::size_t s = 0; s < n; ++s) {
    (s < n_train ? ds.train : s < n_train + n_val ? ds.val : ds.test).push_back(s);
  }
  return ds;
}

void write_series_csv(const std::filesystem::path& path, const Tensor& series) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "t";
  for (std::size_t j = 0; j < series.dim(1); ++j) out << ",x" << j;
  out << "\n";
  out.precision(17);
  for (std::size_t t = 0; t < series.dim(0); ++t) {
    out << t;
    for (std::size_t j = 0; j < series.dim(1); ++j) out << "," << series.at(t, j);
    out << "\n";
  }
}

std::vector<unsigned char> read_maybe_gzip(const std::filesystem::path& path) {
  gzFile f = gzopen(path.c_str(), "rb");
  if (!f) throw DataError("cannot open " + path.string());
  std::vector<unsigned char> out;
  unsigned char buf[1 << 16];
  int n;
  while ((n = gzread(f, buf, sizeof buf)) > 0) out.insert(out.end(), buf, buf + n);
  const bool failed = n < 0;
  gzclose(f);
  if (failed) throw FormatError(path.string() + ": corrupt gzip stream");
  return out;
}

namespace {

struct IdxFile {
  std::vector<std::size_t> dims;
  std::size_t data_offset = 0;
};

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t at, const std::string& what) {
  if (at + 4 > b.size()) throw FormatError(what + ": truncated header at byte offset " + std::to_string(at));
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) | (std::uint32_t{b[at + 2]} << 8) | b[at + 3];
}

IdxFile parse_idx(const std::vector<unsigned char>& b, std::size_t want_rank, const std::string& what) {
  const std::uint32_t magic = be32(b, 0, what);
  if ((magic >> 8) != 0x08 || (magic & 0xff) != want_rank) {
    throw FormatError(what + ": bad magic at byte offset 0 (expected unsigned-byte IDX of rank " +
                      std::to_string(want_rank) + ")");
  }
  IdxFile f;
  std::size_t count = 1;
  for (std::size_t i = 0; i < want_rank; ++i) {
    f.dims.push_back(be32(b, 4 + 4 * i, what));
    count *= f.dims.back();
  }
  f.data_offset = 4 + 4 * want_rank;
  if (b.size() < f.data_offset + count) {
    throw FormatError(what + ": truncated payload at byte offset " + std::to_string(b.size()) + ", expected " +
                      std::to_string(f.data_offset + count) + " bytes");
  }
  return f;
}

}  // namespace

Dataset load_idx_images(const std::filesystem::path& images, const std::filesystem::path& labels, std::size_t limit,
                        std::uint64_t seed, bool test_split) {
  const auto ib = read_maybe_gzip(images);
  const auto lb = read_maybe_gzip(labels);
  const IdxFile fi = parse_idx(ib, 3, images.string());
  const IdxFile fl = parse_idx(lb, 1, labels.string());
  const std::size_t n = fi.dims[0], h = fi.dims[1], w = fi.dims[2];
  if (fl.dims[0] != n) throw DataError("image and label counts differ: " + std::to_string(n) + " vs " + std::to_string(fl.dims[0]));

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  if (!test_split) {
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
  }
  if (limit && limit < n) order.resize(limit);
  const std::size_t m = order.size();

  Dataset d;
  d.task = Task::mnist;
  d.inputs = Tensor({m, 1, h, w});
  for (std::size_t k = 0; k < m; ++k) {
    const std::size_t src = order[k];
    const int label = lb[fl.data_offset + src];
    if (label > 9) throw DataError("label " + std::to_string(label) + " out of range at item " + std::to_string(src));
    d.labels.push_back(label);
    for (std::size_t p = 0; p < h * w; ++p) d.inputs[k * h * w + p] = ib[fi.data_offset + src * h * w + p] / 255.0;
  }
  for (std::size_t k = 0; k < m; ++k) {
    if (test_split) {
      d.test.push_back(k);
    } else {
      (k < m * 9 / 10 ? d.train : d.val).push_back(k);
    }
  }
  return d;
}

Dataset downsample_images(const Dataset& data) {
  if (data.inputs.rank() != 4 || data.inputs.dim(2) % 2 || data.inputs.dim(3) % 2) {
    throw DimensionError("downsampling needs [N x C x H x W] with even H and W");
  }
  const std::size_t n = data.inputs.dim(0), c = data.inputs.dim(1), h = data.inputs.dim(2), w = data.inputs.dim(3);
  Dataset out = data;
  out.inputs = Tensor({n, c, h / 2, w / 2});
  for (std::size_t p = 0; p < n * c; ++p) {
    for (std::size_t i = 0; i < h / 2; ++i) {
      for (std::size_t j = 0; j < w / 2; ++j) {
        const double* src = data.inputs.data().data() + p * h * w;
        out.inputs[(p * (h / 2) + i) * (w / 2) + j] =
            0.25 * (src[2 * i * w + 2 * j] + src[2 * i * w + 2 * j + 1] + src[(2 * i + 1) * w + 2 * j] +
                    src[(2 * i + 1) * w + 2 * j + 1]);
      }
    }
  }
  return out;
}

}  // namespace ace
