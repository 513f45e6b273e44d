#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <numeric>
#include <random>
#include <filesystem>
#include <fstream>

#include "ace/data.hpp"
#include "ace/errors.hpp"
#include "ace/metrics.hpp"

using namespace ace;

namespace {

const std::filesystem::path mnist_dir = ACE_MNIST_DIR;

std::filesystem::path scratch(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("ace_data_" + name);
}

void write_bytes(const std::filesystem::path& p, const std::vector<unsigned char>& b) {
  std::ofstream(p, std::ios::binary).write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

std::vector<unsigned char> idx_bytes(std::vector<std::uint32_t> dims, const std::vector<unsigned char>& payload) {
  std::vector<unsigned char> b = {0, 0, 0x08, static_cast<unsigned char>(dims.size())};
  for (auto d : dims) {
    for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<unsigned char>(d >> s));
  }
  b.insert(b.end(), payload.begin(), payload.end());
  return b;
}

}  // namespace

TEST_CASE("synth_crossing") {
  SUBCASE("noiseless construction") {
    auto d = synth_crossing(4, 0.0, 1);
    CHECK(d.inputs.values() == std::vector<double>{-1, -1, 1, 1});
    CHECK(d.targets.values() == std::vector<double>{1, 1, -1, -1});
    CHECK(d.labels == std::vector<int>{0, 0, 1, 1});
  }
  SUBCASE("balance and determinism") {
    auto a = synth_crossing(200, 0.05, 42);
    CHECK(std::count(a.labels.begin(), a.labels.end(), 0) == 100);
    auto b = synth_crossing(200, 0.05, 42);
    CHECK(a.inputs == b.inputs);
    CHECK(a.targets == b.targets);
    CHECK(synth_crossing(200, 0.05, 43).inputs != a.inputs);
  }
  SUBCASE("odd n") { CHECK_THROWS_AS(synth_crossing(5, 0.1, 1), ConfigError); }
}

TEST_CASE("property: random splits are disjoint and cover") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto d = synth_crossing(2 * (10 + seed), 0.05, seed);
    assign_random_splits(d, 0.2, 0.2, seed);
    CHECK_NOTHROW(d.check_splits());
    CHECK(d.val.size() == d.size() / 5);
    CHECK(d.test.size() == d.size() / 5);
    auto e = d;
    assign_random_splits(e, 0.2, 0.2, seed);
    CHECK(e.train == d.train);
  }
  auto d = synth_crossing(10, 0.0, 1);
  assign_random_splits(d, 0.2, 0.2, 1);
  d.val.push_back(d.train.front());
  CHECK_THROWS_AS(d.check_splits(), DataError);
}

TEST_CASE("synth_var_series") {
  SUBCASE("pure decay without noise") {
    Tensor A({2, 2});
    A.at(0, 0) = A.at(1, 1) = 0.9;
    Tensor x = synth_var_series(2, 50, A, 0.0, 1);
    // starts from zero and has no noise: stays zero, so seed one step by hand
    CHECK(x.at(49, 0) == 0.0);
    Tensor s({50, 2});
    s.at(0, 0) = 1.0;
    s.at(0, 1) = -2.0;
    for (std::size_t t = 1; t < 50; ++t) {
      s.at(t, 0) = 0.9 * s.at(t - 1, 0);
      s.at(t, 1) = 0.9 * s.at(t - 1, 1);
    }
    auto ds = make_forecast_dataset(s, 3);
    double err = 0.0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      for (std::size_t j = 0; j < 2; ++j) {
        const double last = ds.inputs[(i * 3 + 2) * 2 + j] + ds.offset[j];
        const double next = ds.targets.at(i, j) + ds.offset[j];
        err += std::pow(next - 0.9 * last, 2);
      }
    }
    CHECK(err < 1e-28);
  }
  SUBCASE("independent noise floor") {
    Tensor A({3, 3});
    const double noise = 0.3;
    Tensor x = synth_var_series(3, 20000, A, noise, 2);
    double s = 0.0;
    for (std::size_t t = 1; t < 20000; ++t) {
      for (std::size_t j = 0; j < 3; ++j) s += x.at(t, j) * x.at(t, j);
    }
    CHECK(s / (3.0 * 19999) == doctest::Approx(noise * noise).epsilon(0.03));
  }
  SUBCASE("lag-1 cross-covariance recovers the sign pattern") {
    const Tensor A = Tensor::matrix({{0.5, -0.4, 0.0}, {0.3, 0.0, 0.6}, {0.0, -0.5, 0.4}});
    const std::size_t T = 10000;
    Tensor x = synth_var_series(3, T, A, 0.5, 3);
    // E[x_{t+1} x_t^T] = A Sigma; solve with the lag-0 covariance
    Tensor c0({3, 3}), c1({3, 3});
    for (std::size_t t = 0; t + 1 < T; ++t) {
      for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = 0; j < 3; ++j) {
          c0.at(i, j) += x.at(t, i) * x.at(t, j);
          c1.at(i, j) += x.at(t + 1, i) * x.at(t, j);
        }
      }
    }
    Eigen::Matrix3d m0, m1;
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        m0(i, j) = c0.at(i, j);
        m1(i, j) = c1.at(i, j);
      }
    }
    const Eigen::Matrix3d est = m1 * m0.inverse();
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        if (A.at(i, j) == 0.0) {
          CHECK(std::abs(est(i, j)) < 0.05);
        } else {
          CHECK((est(i, j) > 0) == (A.at(i, j) > 0));
        }
      }
    }
  }
  SUBCASE("unstable coupling") {
    CHECK_THROWS_AS(synth_var_series(2, 10, Tensor::matrix({{1.1, 0}, {0, 0.5}}), 0.1, 1), ConfigError);
    CHECK_THROWS_AS(synth_var_series(2, 10, Tensor::matrix({{0, 1}, {-1, 0}}), 0.1, 1), ConfigError);
    CHECK(spectral_radius(Tensor::matrix({{0, 0.5}, {-0.5, 0}})) == doctest::Approx(0.5));
  }
  SUBCASE("property: stationarity and chronological splits") {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 10; ++trial) {
      Tensor A({4, 4});
      for (auto& v : A.data()) v = std::uniform_real_distribution<double>(-1, 1)(rng);
      const double rho = spectral_radius(A);
      for (auto& v : A.data()) v *= 0.95 / rho;
      Tensor x = synth_var_series(4, 4000, A, 0.1, trial);
      double var = 0.0;
      for (std::size_t t = 2000; t < 4000; ++t) {
        for (std::size_t j = 0; j < 4; ++j) var += x.at(t, j) * x.at(t, j);
      }
      CHECK(var / 8000 < 1.0);
      auto ds = make_forecast_dataset(x, 8);
      CHECK_NOTHROW(ds.check_splits());
      CHECK(ds.train.back() < ds.val.front());
      CHECK(ds.val.back() < ds.test.front());
    }
  }
  SUBCASE("csv export") {
    const auto p = scratch("series.csv");
    write_series_csv(p, Tensor::matrix({{1, 2}, {3, 4.5}}));
    std::ifstream in(p);
    std::string header, row;
    std::getline(in, header);
    std::getline(in, row);
    CHECK(header == "t,x0,x1");
    CHECK(row == "0,1,2");
    std::filesystem::remove(p);
  }
}

TEST_CASE("load_idx_images") {
  const auto images = mnist_dir / "train-images-idx3-ubyte.gz";
  const auto labels = mnist_dir / "train-labels-idx1-ubyte.gz";
  SUBCASE("bundled subset") {
    auto all = load_idx_images(images, labels, 0, 1);
    CHECK(all.size() == 8000);
    CHECK(all.sample_shape() == Shape{1, 28, 28});
    CHECK(all.train.size() == 7200);
    CHECK_NOTHROW(all.check_splits());
    const auto [lo, hi] = std::minmax_element(all.inputs.data().begin(), all.inputs.data().end());
    CHECK(*lo == 0.0);
    CHECK(*hi == 1.0);
    const auto [lmin, lmax] = std::minmax_element(all.labels.begin(), all.labels.end());
    CHECK(*lmin == 0);
    CHECK(*lmax == 9);
    auto test = load_idx_images(mnist_dir / "t10k-images-idx3-ubyte.gz", mnist_dir / "t10k-labels-idx1-ubyte.gz", 1000, 1, true);
    CHECK(test.test.size() == 1000);
    CHECK(test.train.empty());
  }
  SUBCASE("limit keeps the first items after the seeded shuffle") {
    auto all = load_idx_images(images, labels, 0, 7);
    auto few = load_idx_images(images, labels, 100, 7);
    CHECK(few.size() == 100);
    CHECK(std::equal(few.inputs.data().begin(), few.inputs.data().end(), all.inputs.data().begin()));
    CHECK(std::equal(few.labels.begin(), few.labels.end(), all.labels.begin()));
    CHECK(load_idx_images(images, labels, 100, 8).labels != few.labels);
  }
  SUBCASE("downsampling") {
    auto few = load_idx_images(images, labels, 10, 7);
    auto small = downsample_images(few);
    CHECK(small.sample_shape() == Shape{1, 14, 14});
    const double* src = few.inputs.data().data();
    CHECK(small.inputs[0] == doctest::Approx(0.25 * (src[0] + src[1] + src[28] + src[29])));
  }
  SUBCASE("hand-built files, plain and broken") {
    const auto im = scratch("im.idx"), lb = scratch("lb.idx");
    write_bytes(im, idx_bytes({2, 2, 2}, {0, 255, 51, 102, 1, 2, 3, 4}));
    write_bytes(lb, idx_bytes({2}, {3, 9}));
    auto d = load_idx_images(im, lb, 0, 0, true);
    CHECK(d.labels == std::vector<int>{3, 9});
    CHECK(d.inputs[1] == 1.0);
    CHECK(d.inputs[2] == doctest::Approx(0.2));

    write_bytes(im, idx_bytes({2, 2, 2}, {0, 255, 51}));
    try {
      load_idx_images(im, lb, 0, 0, true);
      FAIL("expected a format error");
    } catch (const FormatError& e) {
      CHECK(std::string(e.what()).find("byte offset 19") != std::string::npos);
    }
    auto bad = idx_bytes({2}, {3, 9});
    bad[2] = 0x0d;
    write_bytes(lb, bad);
    write_bytes(im, idx_bytes({2, 2, 2}, {0, 255, 51, 102, 1, 2, 3, 4}));
    CHECK_THROWS_AS(load_idx_images(im, lb, 0, 0, true), FormatError);
    write_bytes(lb, idx_bytes({3}, {1, 2, 3}));
    CHECK_THROWS_AS(load_idx_images(im, lb, 0, 0, true), DataError);
    write_bytes(lb, idx_bytes({2}, {1, 12}));
    CHECK_THROWS_AS(load_idx_images(im, lb, 0, 0, true), DataError);
    CHECK_THROWS_AS(load_idx_images(scratch("missing"), lb, 0, 0, true), DataError);
    std::filesystem::remove(im);
    std::filesystem::remove(lb);
  }
}

TEST_CASE("gather") {
  auto d = synth_crossing(6, 0.1, 3);
  const std::size_t idx[] = {5, 0};
  auto b = gather(d, idx);
  CHECK(b.size() == 2);
  CHECK(b.inputs[0] == d.inputs[5]);
  CHECK(b.labels == std::vector<int>{1, 0});
  CHECK_THROWS_AS(gather(d, std::span<const std::size_t>()), UsageError);
}

TEST_CASE("accuracy") {
  CHECK(accuracy(Tensor::matrix({{1, 0, 0}, {0, 0, 1}}), std::vector<int>{0, 2}) == 1.0);
  CHECK(accuracy(Tensor({3, 4}), std::vector<int>{0, 0, 0}) == 1.0);
  CHECK(accuracy(Tensor::matrix({{2, 1}, {0, 3}, {5, 4}, {1, 1}}), std::vector<int>{0, 1, 1, 0}) == 0.75);
  CHECK_THROWS_AS(accuracy(Tensor({1, 2}), std::vector<int>{}), UsageError);
  SUBCASE("property: permutation invariance") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 50; ++trial) {
      Tensor logits({12, 3});
      std::vector<int> labels(12);
      for (auto& v : logits.data()) v = std::uniform_int_distribution<int>(0, 2)(rng);
      for (auto& l : labels) l = std::uniform_int_distribution<int>(0, 2)(rng);
      std::vector<std::size_t> perm(12);
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), rng);
      Tensor pl({12, 3});
      std::vector<int> plab(12);
      for (std::size_t i = 0; i < 12; ++i) {
        for (std::size_t k = 0; k < 3; ++k) pl.at(i, k) = logits.at(perm[i], k);
        plab[i] = labels[perm[i]];
      }
      const double a = accuracy(logits, labels);
      CHECK(a == accuracy(pl, plab));
      CHECK_UNARY(a >= 0.0 && a <= 1.0);
    }
  }
}

TEST_CASE("mse and mse_over_time") {
  CHECK(mse(Tensor::vector({0, 2}), Tensor::vector({1, 0})) == 2.5);
  Trajectory truth{{0, 0.5, 1}, {{1, 2}, {3, 4}, {5, 6}}};
  CHECK(mse_over_time(truth, truth).aggregate == 0.0);
  Trajectory off = truth;
  for (auto& s : off.states) {
    for (auto& v : s) v += 1;
  }
  auto c = mse_over_time(off, truth);
  CHECK(c.mse == std::vector<double>{1, 1, 1});
  CHECK(c.aggregate == 1.0);

  std::mt19937_64 rng(6);
  std::normal_distribution<double> n(0, 1);
  Trajectory p = truth;
  for (auto& s : p.states) {
    for (auto& v : s) v += n(rng);
  }
  c = mse_over_time(p, truth);
  CHECK(c.aggregate == doctest::Approx((c.mse[0] + c.mse[1] + c.mse[2]) / 3).epsilon(1e-15));
  Tensor pf({3, 2}), tf({3, 2});
  for (std::size_t k = 0; k < 3; ++k) {
    for (std::size_t j = 0; j < 2; ++j) {
      pf.at(k, j) = p.states[k][j];
      tf.at(k, j) = truth.states[k][j];
    }
  }
  CHECK(c.aggregate == doctest::Approx(mse(pf, tf)).epsilon(1e-14));

  Trajectory shifted = truth;
  shifted.times[1] = 0.6;
  CHECK_THROWS_AS(mse_over_time(shifted, truth), AlignmentError);

  const auto path = scratch("curve.csv");
  write_curve_csv(path, c);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  CHECK(header == "t,mse");
  std::filesystem::remove(path);
}
