#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "ace/errors.hpp"
#include "ace/ops.hpp"
#include "oracles.hpp"

using namespace ace;

TEST_CASE("tensor invariants") {
  CHECK_THROWS_AS(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
  CHECK_THROWS_AS(Tensor(Shape{2, 0}), DimensionError);
  Tensor s = Tensor::scalar(4.0);
  CHECK(s.rank() == 0);
  CHECK(s.item() == 4.0);
  CHECK_THROWS_AS(Tensor(Shape{3}).item(), UsageError);
}

TEST_CASE("matmul") {
  Tape tape;
  SUBCASE("identity") {
    auto i2 = tape.constant(Tensor::matrix({{1, 0}, {0, 1}}));
    auto m = tape.constant(Tensor::matrix({{1, 2}, {3, 4}}));
    CHECK(matmul(i2, m).value() == Tensor::matrix({{1, 2}, {3, 4}}));
  }
  SUBCASE("row times column") {
    auto r = tape.constant(Tensor::matrix({{1, 2}}));
    auto c = tape.constant(Tensor::matrix({{3}, {4}}));
    CHECK(matmul(r, c).value().item() == 11.0);
  }
  SUBCASE("shape mismatch names both shapes") {
    auto a = tape.constant(Tensor(Shape{2, 3}));
    auto b = tape.constant(Tensor(Shape{2, 3}));
    try {
      matmul(a, b);
      FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
      CHECK(std::string(e.what()).find("[2x3] and [2x3]") != std::string::npos);
    }
  }
  SUBCASE("gradients match finite differences") {
    std::mt19937_64 rng(7);
    const auto w = oracle::random_tensor({3, 3}, rng);
    oracle::ScalarBuilder f = [&](Tape& t, const std::vector<Var>& in) {
      return oracle::weighted_sum(matmul(in[0], in[1]), w);
    };
    std::vector<Tensor> x{oracle::random_tensor({3, 3}, rng), oracle::random_tensor({3, 3}, rng)};
    CHECK(oracle::max_relative_error(oracle::tape_gradients(f, x), oracle::central_differences(f, x)) < 1e-6);
  }
}

TEST_CASE("softmax_rows") {
  Tape tape;
  auto y = softmax_rows(tape.constant(Tensor::matrix({{0, 0}, {std::log(2.0), 0}, {1000, 0}})));
  const auto& v = y.value();
  CHECK(v.at(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(v.at(0, 1) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(std::abs(v.at(1, 0) - 2.0 / 3.0) < 1e-15);
  CHECK(std::abs(v.at(1, 1) - 1.0 / 3.0) < 1e-15);
  CHECK(v.at(2, 0) == 1.0);
  CHECK(v.at(2, 1) < 1e-300);
  CHECK(v.all_finite());

  Tensor bad = Tensor::matrix({{1, 2}});
  bad[0] = std::nan("");
  CHECK_THROWS_AS(softmax_rows(tape.constant(bad)), NumericError);
}

TEST_CASE("pointwise activations") {
  Tape tape;
  CHECK(sigmoid(tape.constant(Tensor::scalar(0))).value().item() == 0.5);
  CHECK(ace::tanh(tape.constant(Tensor::scalar(0))).value().item() == 0.0);
  CHECK(relu(tape.constant(Tensor::vector({-1, 2}))).value() == Tensor::vector({0, 2}));

  // Subgradient at exactly zero is zero.
  auto x = tape.leaf(Tensor::vector({0.0, 1.0, -1.0}));
  auto g = tape.backward(sum(relu(x)));
  CHECK(g.wrt(x) == Tensor::vector({0.0, 1.0, 0.0}));
}

TEST_CASE("conv2d") {
  Tape tape;
  std::mt19937_64 rng(11);
  SUBCASE("zero weight") {
    auto x = tape.constant(oracle::random_tensor({2, 4, 4}, rng));
    auto y = conv2d(x, tape.constant(Tensor(Shape{3, 2, 3, 3})));
    CHECK(y.shape() == Shape{3, 4, 4});
    for (double v : y.value().data()) CHECK(v == 0.0);
  }
  SUBCASE("centre-one kernel is the identity") {
    Tensor k(Shape{1, 1, 3, 3});
    k[4] = 1.0;
    const auto img = oracle::random_tensor({1, 3, 3}, rng);
    CHECK(conv2d(tape.constant(img), tape.constant(k)).value() == img);
  }
  SUBCASE("channel mismatch") {
    CHECK_THROWS_AS(conv2d(tape.constant(Tensor(Shape{2, 4, 4})), tape.constant(Tensor(Shape{1, 3, 3, 3}))),
                    DimensionError);
  }
  SUBCASE("gradients match finite differences") {
    const auto w = oracle::random_tensor({3, 4, 4}, rng);
    oracle::ScalarBuilder f = [&](Tape&, const std::vector<Var>& in) {
      return oracle::weighted_sum(conv2d(in[0], in[1]), w);
    };
    std::vector<Tensor> x{oracle::random_tensor({2, 4, 4}, rng), oracle::random_tensor({3, 2, 3, 3}, rng)};
    CHECK(oracle::max_relative_error(oracle::tape_gradients(f, x), oracle::central_differences(f, x)) < 1e-5);
  }
  SUBCASE("batched matches per-sample") {
    const auto wt = oracle::random_tensor({2, 1, 3, 3}, rng);
    const auto a = oracle::random_tensor({1, 1, 5, 5}, rng);
    const auto b = oracle::random_tensor({1, 1, 5, 5}, rng);
    std::vector<double> both(a.values());
    both.insert(both.end(), b.values().begin(), b.values().end());
    auto yb = conv2d(tape.constant(Tensor({2, 1, 5, 5}, both)), tape.constant(wt)).value();
    auto ya = conv2d(tape.constant(a.reshaped({1, 5, 5})), tape.constant(wt)).value();
    auto y2 = conv2d(tape.constant(b.reshaped({1, 5, 5})), tape.constant(wt)).value();
    for (std::size_t i = 0; i < 50; ++i) {
      CHECK(yb[i] == ya[i]);
      CHECK(yb[50 + i] == y2[i]);
    }
  }
}

TEST_CASE("group_norm") {
  Tape tape;
  const double eps = 1e-5;
  auto ones = tape.constant(Tensor(Shape{2}, 1.0));
  auto zeros = tape.constant(Tensor(Shape{2}));
  SUBCASE("constant input") {
    auto y = group_norm(tape.constant(Tensor(Shape{2, 3, 3}, 4.2)), ones, zeros, 2, eps);
    for (double v : y.value().data()) CHECK(v == 0.0);
  }
  SUBCASE("two channels, one group") {
    // mean 2, variance 1 -> (x - 2) / sqrt(1 + eps)
    auto y = group_norm(tape.constant(Tensor({2, 1, 2}, {1, 1, 3, 3})), ones, zeros, 1, eps);
    const double expect = 1.0 / std::sqrt(1.0 + eps);
    CHECK(y.value()[0] == doctest::Approx(-expect).epsilon(1e-14));
    CHECK(y.value()[3] == doctest::Approx(expect).epsilon(1e-14));
    CHECK(std::abs(std::abs(y.value()[0]) - 1.0) < 1e-5);
  }
  SUBCASE("indivisible channel count") {
    auto g3 = tape.constant(Tensor(Shape{3}, 1.0));
    CHECK_THROWS_AS(group_norm(tape.constant(Tensor(Shape{3, 2, 2})), g3, g3, 2), ConfigError);
  }
  SUBCASE("gradients match finite differences") {
    std::mt19937_64 rng(3);
    const auto w = oracle::random_tensor({4, 3, 3}, rng);
    oracle::ScalarBuilder f = [&](Tape&, const std::vector<Var>& in) {
      return oracle::weighted_sum(group_norm(in[0], in[1], in[2], 2, eps), w);
    };
    std::vector<Tensor> x{oracle::random_tensor({4, 3, 3}, rng), oracle::random_tensor({4}, rng, 0.5, 1.5),
                          oracle::random_tensor({4}, rng)};
    CHECK(oracle::max_relative_error(oracle::tape_gradients(f, x), oracle::central_differences(f, x)) < 1e-5);
  }
}

TEST_CASE("backward") {
  SUBCASE("sum gives all-ones") {
    Tape tape;
    auto x = tape.leaf(Tensor::matrix({{3, -1}, {0.5, 9}}));
    auto g = tape.backward(sum(x)).wrt(x);
    for (double v : g.data()) CHECK(v == 1.0);
  }
  SUBCASE("x*x at 3") {
    Tape tape;
    auto x = tape.leaf(Tensor::scalar(3));
    CHECK(tape.backward(mul(x, x)).wrt(x).item() == 6.0);
  }
  SUBCASE("unreachable parameter gets zeros") {
    Tape tape;
    auto x = tape.leaf(Tensor::scalar(3));
    auto unused = tape.leaf(Tensor::vector({1, 2}));
    auto g = tape.backward(scale(x, 2.0));
    CHECK_FALSE(g.reached(unused));
    CHECK(g.wrt(unused) == Tensor::vector({0, 0}));
  }
  SUBCASE("detached loss") {
    Tape tape;
    auto c = tape.constant(Tensor::scalar(1.0));
    CHECK_THROWS_AS(tape.backward(scale(c, 2.0)), UsageError);
  }
  SUBCASE("composite matmul + softmax + sigmoid") {
    std::mt19937_64 rng(5);
    oracle::ScalarBuilder f = [](Tape&, const std::vector<Var>& in) {
      return sum(sigmoid(matmul(softmax_rows(in[0]), in[1])));
    };
    std::vector<Tensor> x{oracle::random_tensor({3, 4}, rng), oracle::random_tensor({4, 2}, rng)};
    CHECK(oracle::max_relative_error(oracle::tape_gradients(f, x), oracle::central_differences(f, x)) < 1e-6);
  }
}

TEST_CASE("property: rows of softmax sum to one") {
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<int> dim(1, 12);
  for (int trial = 0; trial < 200; ++trial) {
    Tape tape(false);
    const std::size_t m = dim(rng), n = dim(rng);
    auto y = softmax_rows(tape.constant(oracle::random_tensor({m, n}, rng, -50, 50)));
    for (std::size_t r = 0; r < m; ++r) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += y.value().at(r, j);
      CHECK(std::abs(s - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("property: every differentiable op agrees with finite differences") {
  std::mt19937_64 rng(2024);
  const Tensor w23 = oracle::random_tensor({2, 3}, rng);
  const Tensor w4 = oracle::random_tensor({2, 2, 2, 4}, rng);
  struct Case {
    const char* name;
    std::vector<Shape> shapes;
    oracle::ScalarBuilder f;
  };
  std::vector<Case> cases = {
      {"add", {{2, 3}, {2, 3}}, [&](Tape&, auto& in) { return oracle::weighted_sum(add(in[0], in[1]), w23); }},
      {"sub", {{2, 3}, {2, 3}}, [&](Tape&, auto& in) { return oracle::weighted_sum(sub(in[0], in[1]), w23); }},
      {"mul", {{2, 3}, {2, 3}}, [&](Tape&, auto& in) { return oracle::weighted_sum(mul(in[0], in[1]), w23); }},
      {"linear", {{2, 4}, {3, 4}, {3}},
       [&](Tape&, auto& in) { return oracle::weighted_sum(linear(in[0], in[1], &in[2]), w23); }},
      {"batched_matvec", {{2, 3, 3}, {2, 3}},
       [&](Tape&, auto& in) { return oracle::weighted_sum(batched_matvec(in[0], in[1]), w23); }},
      {"softmax", {{2, 3}}, [&](Tape&, auto& in) { return oracle::weighted_sum(softmax_rows(in[0]), w23); }},
      {"sigmoid", {{2, 3}}, [&](Tape&, auto& in) { return oracle::weighted_sum(sigmoid(in[0]), w23); }},
      {"tanh", {{2, 3}}, [&](Tape&, auto& in) { return oracle::weighted_sum(ace::tanh(in[0]), w23); }},
      {"time column", {{2, 2}},
       [&](Tape&, auto& in) { return oracle::weighted_sum(append_time_column(in[0], 0.3), w23); }},
      {"avg_pool2", {{2, 2, 4, 8}},
       [&](Tape&, auto& in) { return oracle::weighted_sum(avg_pool2(in[0]), w4); }},
      {"square_sum", {{2, 3}}, [&](Tape&, auto& in) { return square_sum(in[0]); }},
      {"abs_sum", {{2, 3}}, [&](Tape&, auto& in) { return abs_sum(in[0]); }},
      {"mse", {{2, 3}}, [&](Tape&, auto& in) { return mse_loss(in[0], w23); }},
      {"cross_entropy", {{2, 3}},
       [&](Tape&, auto& in) {
         static const std::vector<int> labels{2, 0};
         return cross_entropy(in[0], labels);
       }},
      {"slice+concat", {{2, 3}, {4}},
       [&](Tape&, auto& in) {
         std::vector<Var> parts{slice(in[0], 1, {2}), in[1], take_columns(in[0], 1, 2)};
         return square_sum(concat(parts));
       }},
      {"group_norm rows", {{3, 4}, {4}, {4}},
       [&](Tape&, auto& in) { return square_sum(group_norm(in[0], in[1], in[2], 2)); }},
  };
  for (const auto& c : cases) {
    CAPTURE(c.name);
    for (int trial = 0; trial < 5; ++trial) {
      std::vector<Tensor> x;
      for (const auto& s : c.shapes) x.push_back(oracle::random_tensor(s, rng));
      CHECK(oracle::max_relative_error(oracle::tape_gradients(c.f, x), oracle::central_differences(c.f, x)) < 1e-4);
    }
  }
}

TEST_CASE("property: identical runs give bitwise-identical gradients") {
  auto run = [] {
    std::mt19937_64 rng(1234);
    Tape tape;
    auto x = tape.leaf(oracle::random_tensor({2, 3, 5, 5}, rng));
    auto w = tape.leaf(oracle::random_tensor({4, 3, 3, 3}, rng));
    auto gamma = tape.leaf(Tensor(Shape{4}, 1.0));
    auto beta = tape.leaf(Tensor(Shape{4}));
    auto loss = square_sum(relu(group_norm(conv2d(x, w), gamma, beta, 2)));
    auto g = tape.backward(loss);
    return std::vector<Tensor>{g.wrt(x), g.wrt(w), g.wrt(gamma)};
  };
  CHECK(run() == run());
}

TEST_CASE("property: backward is linear in the loss") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const auto xv = oracle::random_tensor({3, 3}, rng);
    const auto wv = oracle::random_tensor({3, 3}, rng);
    const double alpha = std::uniform_real_distribution<double>(-2, 2)(rng);
    const double beta = std::uniform_real_distribution<double>(-2, 2)(rng);
    Tape tape;
    auto x = tape.leaf(xv);
    auto w = tape.constant(wv);
    auto l1 = sum(ace::tanh(matmul(x, w)));
    auto l2 = square_sum(softmax_rows(x));
    const Tensor g1 = tape.backward(l1).wrt(x);
    const Tensor g2 = tape.backward(l2).wrt(x);
    const Tensor g = tape.backward(add(scale(l1, alpha), scale(l2, beta))).wrt(x);
    for (std::size_t i = 0; i < g.size(); ++i) CHECK(std::abs(g[i] - (alpha * g1[i] + beta * g2[i])) <= 1e-12);
  }
}
