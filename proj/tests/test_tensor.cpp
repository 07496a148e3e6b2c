#include <doctest.h>

#include <cmath>
#include <limits>

#include "oracles.hpp"
#include "rvafm/grad_check.hpp"
#include "rvafm/ops.hpp"
#include "rvafm/random.hpp"

using namespace rvafm;

namespace {

template <typename S>
Tensor<S> vec(std::vector<S> v) {
  const int n = static_cast<int>(v.size());
  return Tensor<S>({n}, std::move(v));
}

}  // namespace

TEST_CASE("elementwise basics") {
  auto t0 = rvafm::tanh(vec<double>({0.0}));
  CHECK(t0(0) == 0.0);

  auto c = clamp(vec<double>({-0.5, 0.3, 1.7}), 0.0, 1.0);
  CHECK(c(0) == 0.0);
  CHECK(c(1) == doctest::Approx(0.3));
  CHECK(c(2) == 1.0);

  // value frozen from a 30-digit evaluation of (e^x - e^-x)/(e^x + e^-x)
  auto t1 = rvafm::tanh(vec<double>({1.0}));
  CHECK(t1(0) == doctest::Approx(0.761594155955764888).epsilon(1e-14));

  auto s = add(vec<double>({1, 2}), vec<double>({3, 4}));
  CHECK(s(0) == 4.0);
  CHECK(s(1) == 6.0);
  CHECK_THROWS_AS(add(vec<double>({1}), vec<double>({1, 2})), std::invalid_argument);
}

TEST_CASE("matmul basics") {
  Tensor<double> eye({2, 2}, {1, 0, 0, 1});
  Tensor<double> x({2, 3}, {1, 2, 3, 4, 5, 6});
  auto same = matmul(eye, x);
  for (long i = 0; i < x.size(); ++i) CHECK(same.data()[i] == x.data()[i]);

  Tensor<double> a({2, 2}, {1, 2, 3, 4});
  Tensor<double> b({2, 1}, {1, 1});
  auto ab = matmul(a, b);
  CHECK(ab(0, 0) == 3.0);
  CHECK(ab(1, 0) == 7.0);

  Tensor<double> bad({3, 2}, {1, 2, 3, 4, 5, 6});
  CHECK_THROWS_AS(matmul(a, bad), std::invalid_argument);
}

TEST_CASE("matmul against triple-loop reference") {
  Rng rng(42);
  auto a = oracle::random_tensor<double>(rng, {5, 7});
  auto b = oracle::random_tensor<double>(rng, {7, 3});
  CHECK(oracle::rel_diff(matmul(a, b), oracle::matmul(a, b)) < 1e-12);

  auto af = a.cast<float>();
  auto bf = b.cast<float>();
  CHECK(oracle::rel_diff(matmul(af, bf), oracle::matmul(af, bf)) < 1e-6);
}

TEST_CASE("conv1d basics") {
  Tensor<double> x({3, 1}, {1, 2, 3});
  Tensor<double> delta({1, 1, 3}, {0, 1, 0});
  Tensor<double> zero_bias({1}, {0});
  auto ident = conv1d(x, delta, zero_bias, 1, 1);
  CHECK(ident.shape() == Shape{3, 1});
  CHECK(ident(0, 0) == 1.0);
  CHECK(ident(1, 0) == 2.0);
  CHECK(ident(2, 0) == 3.0);

  Tensor<double> box({1, 1, 3}, {1, 1, 1});
  Tensor<double> one_bias({1}, {1});
  auto summed = conv1d(x, box, one_bias, 1, 0);
  CHECK(summed.shape() == Shape{1, 1});
  CHECK(summed(0, 0) == 7.0);

  // kernel larger than the padded input
  CHECK_THROWS_AS(conv1d(x, Tensor<double>({1, 1, 6}), zero_bias, 1, 1), std::invalid_argument);
}

TEST_CASE("conv1d against sliding-window reference") {
  Rng rng(7);
  auto x = oracle::random_tensor<double>(rng, {20, 2});
  auto k = oracle::random_tensor<double>(rng, {3, 2, 15});
  auto b = oracle::random_tensor<double>(rng, {3});
  CHECK(oracle::rel_diff(conv1d(x, k, b, 1, 7), oracle::conv1d(x, k, b, 1, 7)) < 1e-12);
}

TEST_CASE("adaptive max pool width") {
  Rng rng(3);
  auto x = oracle::random_tensor<double>(rng, {4, 6, 2});
  auto same = adaptive_max_pool_width(x, 6);
  for (long i = 0; i < x.size(); ++i) CHECK(same.data()[i] == x.data()[i]);

  Tensor<double> row({1, 4, 1}, {1, 5, 2, 4});
  auto halves = adaptive_max_pool_width(row, 2);
  CHECK(halves(0, 0, 0) == 5.0);
  CHECK(halves(0, 1, 0) == 4.0);

  auto wide = oracle::random_tensor<double>(rng, {8, 13, 2});
  auto pooled = adaptive_max_pool_width(wide, 5);
  auto ref = oracle::max_pool_width(wide, 5);
  for (long i = 0; i < pooled.size(); ++i) CHECK(pooled.data()[i] == ref.data()[i]);

  CHECK_THROWS_AS(adaptive_max_pool_width(row, 5), std::invalid_argument);
}

TEST_CASE("softmax values and stability") {
  auto flat = softmax(vec<double>({2.5, 2.5, 2.5}));
  for (int i = 0; i < 3; ++i) CHECK(flat(i) == doctest::Approx(1.0 / 3).epsilon(1e-12));

  auto extreme = softmax(vec<double>({1000.0, 0.0}));
  CHECK(extreme(0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(extreme(1) == doctest::Approx(0.0).epsilon(1e-12));

  // frozen from a 30-digit evaluation
  auto p = softmax(vec<double>({1.0, 2.0, 3.0}));
  CHECK(p(0) == doctest::Approx(0.09003057317038046).epsilon(1e-12));
  CHECK(p(1) == doctest::Approx(0.24472847105479765).epsilon(1e-12));
  CHECK(p(2) == doctest::Approx(0.66524095577482189).epsilon(1e-12));
}

TEST_CASE("softmax invariants over random draws") {
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = rng.uniform_int(1, 12);
    auto x = oracle::random_tensor<double>(rng, {n}, -5.0, 5.0);
    auto p = softmax(x);
    double total = 0;
    for (int i = 0; i < n; ++i) {
      CHECK(p(i) >= 0.0);
      total += p(i);
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-6));

    const double shift = rng.uniform(-10.0, 10.0);
    std::vector<double> shifted = x.values();
    for (double& v : shifted) v += shift;
    auto p2 = softmax(Tensor<double>(x.shape(), shifted));
    for (int i = 0; i < n; ++i) CHECK(std::abs(p2(i) - p(i)) < 1e-6);
  }
}

TEST_CASE("conv and matmul agree with references over random shapes") {
  Rng rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    const int kind = trial % 3;
    if (kind == 0) {
      const int m = rng.uniform_int(1, 8), k = rng.uniform_int(1, 16), n = rng.uniform_int(1, 8);
      auto a = oracle::random_tensor<double>(rng, {m, k});
      auto b = oracle::random_tensor<double>(rng, {k, n});
      CHECK(oracle::rel_diff(matmul(a, b), oracle::matmul(a, b)) < 1e-12);
      auto af = a.cast<float>();
      auto bf = b.cast<float>();
      CHECK(oracle::rel_diff(matmul(af, bf), oracle::matmul(af, bf)) < 1e-6);
    } else if (kind == 1) {
      const int len = rng.uniform_int(4, 24), ci = rng.uniform_int(1, 3),
                co = rng.uniform_int(1, 4);
      const int k = rng.uniform_int(1, std::min(len, 7));
      const int stride = rng.uniform_int(1, 2), pad = rng.uniform_int(0, k / 2 + 1);
      auto x = oracle::random_tensor<double>(rng, {len, ci});
      auto kt = oracle::random_tensor<double>(rng, {co, ci, k});
      auto b = oracle::random_tensor<double>(rng, {co});
      CHECK(oracle::rel_diff(conv1d(x, kt, b, stride, pad),
                             oracle::conv1d(x, kt, b, stride, pad)) < 1e-12);
      auto xf = x.cast<float>();
      auto ktf = kt.cast<float>();
      auto bf = b.cast<float>();
      CHECK(oracle::rel_diff(conv1d(xf, ktf, bf, stride, pad),
                             oracle::conv1d(xf, ktf, bf, stride, pad)) < 1e-6);
    } else {
      const int h = rng.uniform_int(3, 10), w = rng.uniform_int(3, 10), ci = rng.uniform_int(1, 3);
      const int co = rng.uniform_int(1, 4);
      const int kh = rng.uniform_int(1, 3), kw = rng.uniform_int(1, 3);
      const int sh = rng.uniform_int(1, 2), sw = rng.uniform_int(1, 2);
      const int ph = rng.uniform_int(0, 1), pw = rng.uniform_int(0, 1);
      auto x = oracle::random_tensor<double>(rng, {h, w, ci});
      auto kt = oracle::random_tensor<double>(rng, {co, ci, kh, kw});
      auto b = oracle::random_tensor<double>(rng, {co});
      CHECK(oracle::rel_diff(conv2d(x, kt, b, sh, sw, ph, pw),
                             oracle::conv2d(x, kt, b, sh, sw, ph, pw)) < 1e-12);
      auto xf = x.cast<float>();
      auto ktf = kt.cast<float>();
      auto bf = b.cast<float>();
      CHECK(oracle::rel_diff(conv2d(xf, ktf, bf, sh, sw, ph, pw),
                             oracle::conv2d(xf, ktf, bf, sh, sw, ph, pw)) < 1e-6);
    }
  }
}

TEST_CASE("backward computes exact gradients for sum of W*x") {
  Rng rng(5);
  auto w = oracle::random_tensor<double>(rng, {3, 4});
  auto x = oracle::random_tensor<double>(rng, {4, 2});
  auto build = [&](Graph<double>& g, const std::vector<Tensor<double>>& params) {
    (void)g;
    return sum(matmul(params[0], x));
  };
  auto report = grad_check(build, {w}, 1e-5, 1e-4);
  CHECK(report.pass);
  // dL/dW has outer-product structure: row i equals column sums of x
  auto grads = autodiff_gradients(build, {w});
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j) {
      double expect = 0;
      for (int c = 0; c < 2; ++c) expect += x(j, c);
      CHECK(grads[0](i, j) == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("constant loss yields zero gradients") {
  Graph<double> g;
  auto w = g.leaf(Tensor<double>({2, 2}, {1, 2, 3, 4}));
  auto loss = g.leaf(Tensor<double>::scalar(3.0), false);
  g.backward(loss);
  auto gw = g.grad(w);
  for (long i = 0; i < gw.size(); ++i) CHECK(gw.data()[i] == 0.0);
}

TEST_CASE("backward guards") {
  Graph<double> g;
  auto w = g.leaf(Tensor<double>({2}, {1.0, 2.0}));
  auto loss = sum(mul(w, w));
  g.backward(loss);
  CHECK_THROWS_AS(g.backward(loss), std::logic_error);

  Graph<double> g2;
  auto w2 = g2.leaf(Tensor<double>({2}, {1.0, 2.0}));
  CHECK_THROWS_AS(g2.backward(w2), std::invalid_argument);  // non-scalar loss

  Graph<double> g3;
  CHECK_THROWS_AS(g3.backward(loss), std::invalid_argument);  // loss from another graph

  Graph<double> ga, gb;
  auto la = ga.leaf(Tensor<double>({2}, {1, 2}));
  auto lb = gb.leaf(Tensor<double>({2}, {3, 4}));
  CHECK_THROWS_AS(add(la, lb), std::logic_error);
}

TEST_CASE("non-finite values are rejected, never propagated") {
  CHECK_THROWS_AS(Tensor<double>({1}, {std::numeric_limits<double>::quiet_NaN()}),
                  std::domain_error);
  CHECK_THROWS_AS(Tensor<double>({1}, {std::numeric_limits<double>::infinity()}),
                  std::domain_error);
  auto big = Tensor<float>({1}, {3e38f});
  CHECK_THROWS_AS(scale(big, 10.0f), std::domain_error);
}

TEST_CASE("grad_check passes for a dense layer and a tanh chain") {
  Rng rng(17);
  auto w = oracle::random_tensor<double>(rng, {3, 4});
  auto b = oracle::random_tensor<double>(rng, {4});
  auto x = oracle::random_tensor<double>(rng, {5, 3});
  auto dense = [&](Graph<double>& g, const std::vector<Tensor<double>>& p) {
    (void)g;
    return sum(rvafm::tanh(bias_add_rows(matmul(x, p[0]), p[1])));
  };
  auto report = grad_check(dense, {w, b}, {"weight", "bias"}, 1e-5, 1e-4);
  CHECK(report.pass);
  CHECK(report.params.size() == 2);

  auto v = oracle::random_tensor<double>(rng, {6});
  auto chain = [&](Graph<double>& g, const std::vector<Tensor<double>>& p) {
    (void)g;
    Tensor<double> h = p[0];
    for (int d = 0; d < 5; ++d) h = rvafm::tanh(h);
    return sum(h);
  };
  CHECK(grad_check(chain, {v}, 1e-5, 1e-4).pass);
}

TEST_CASE("grad_check detects a corrupted gradient") {
  Rng rng(23);
  auto w = oracle::random_tensor<double>(rng, {3, 3});
  auto x = oracle::random_tensor<double>(rng, {3, 3});
  auto build = [&](Graph<double>& g, const std::vector<Tensor<double>>& p) {
    (void)g;
    return sum(matmul(x, p[0]));
  };
  auto exact = autodiff_gradients(build, {w});
  auto fd = finite_difference_gradients(build, {w}, 1e-5);
  Tensor<double> corrupted(exact[0].shape());
  for (long i = 0; i < corrupted.size(); ++i)
    corrupted.mutable_data()[i] = exact[0].data()[i] * 1.01;
  CHECK(max_relative_error(exact[0], fd[0]) <= 1e-4);
  CHECK(max_relative_error(corrupted, fd[0]) > 1e-4);
}

TEST_CASE("every differentiable op passes a finite-difference check") {
  Rng rng(31);
  const double eps = 1e-5, tol = 1e-4;
  auto weighted_sum = [&](Tensor<double> t, Rng& r) {
    // random fixed weights give a non-uniform upstream gradient
    auto w = oracle::random_tensor<double>(r, t.shape());
    return sum(mul(t, w));
  };

  auto check1 = [&](const char* name, auto&& op, Shape shape) {
    auto x = oracle::random_tensor<double>(rng, shape);
    auto build = [&](Graph<double>& g, const std::vector<Tensor<double>>& p) {
      (void)g;
      Rng wr(99);
      return weighted_sum(op(p[0]), wr);
    };
    INFO(name);
    CHECK(grad_check(build, {x}, eps, tol).pass);
  };

  check1("tanh", [](const Tensor<double>& t) { return rvafm::tanh(t); }, {4, 3});
  check1("sigmoid", [](const Tensor<double>& t) { return sigmoid(t); }, {4, 3});
  check1("clamp", [](const Tensor<double>& t) { return clamp(t, -0.5, 0.5); }, {11});
  check1("scale", [](const Tensor<double>& t) { return scale(t, 2.5); }, {7});
  check1("softmax", [](const Tensor<double>& t) { return softmax(t); }, {9});
  check1("log_softmax_rows", [](const Tensor<double>& t) { return log_softmax_rows(t); }, {4, 5});
  check1("mean_rows", [](const Tensor<double>& t) { return mean_rows(t); }, {4, 5});
  check1("mean_width", [](const Tensor<double>& t) { return mean_width(t); }, {3, 4, 2});
  check1("reshape", [](const Tensor<double>& t) { return reshape(t, {6, 2}); }, {3, 4});
  check1("slice_cols", [](const Tensor<double>& t) { return slice_cols(t, 1, 2); }, {3, 4});
  check1("slice_row", [](const Tensor<double>& t) { return slice_row(t, 2); }, {3, 4});
  check1("pick", [](const Tensor<double>& t) { return pick(t, 3); }, {5});
  check1("pool", [](const Tensor<double>& t) { return adaptive_max_pool_width(t, 3); }, {2, 7, 2});

  // binary ops
  {
    auto a = oracle::random_tensor<double>(rng, {3, 4});
    auto b = oracle::random_tensor<double>(rng, {3, 4});
    auto build = [&](Graph<double>& g, const std::vector<Tensor<double>>& p) {
      (void)g;
      Rng wr(99);
      return weighted_sum(mul(sub(add(p[0], p[1]), scale(p[1], 0.5)), p[0]), wr);
    };
    CHECK(grad_check(build, {a, b}, eps, tol).pass);
  }
  {
    auto a = oracle::random_tensor<double>(rng, {3, 4});
    auto b = oracle::random_tensor<double>(rng, {4, 2});
    auto bias = oracle::random_tensor<double>(rng, {2});
    auto build = [&](Graph<double>& g, const std::vector<Tensor<double>>& p) {
      (void)g;
      Rng wr(99);
      return weighted_sum(bias_add_rows(matmul(p[0], p[1]), p[2]), wr);
    };
    CHECK(grad_check(build, {a, b, bias}, eps, tol).pass);
  }
  {
    auto x = oracle::random_tensor<double>(rng, {10, 2});
    auto k = oracle::random_tensor<double>(rng, {3, 2, 5});
    auto b = oracle::random_tensor<double>(rng, {3});
    auto build = [&](Graph<double>& g, const std::vector<Tensor<double>>& p) {
      (void)g;
      Rng wr(99);
      return weighted_sum(conv1d(p[0], p[1], p[2], 2, 2), wr);
    };
    CHECK(grad_check(build, {x, k, b}, eps, tol).pass);
  }
  {
    auto x = oracle::random_tensor<double>(rng, {6, 7, 2});
    auto k = oracle::random_tensor<double>(rng, {3, 2, 3, 3});
    auto b = oracle::random_tensor<double>(rng, {3});
    auto build = [&](Graph<double>& g, const std::vector<Tensor<double>>& p) {
      (void)g;
      Rng wr(99);
      return weighted_sum(conv2d(p[0], p[1], p[2], 2, 1, 1, 1), wr);
    };
    CHECK(grad_check(build, {x, k, b}, eps, tol).pass);
  }
  {
    auto a = oracle::random_tensor<double>(rng, {3, 2});
    auto b = oracle::random_tensor<double>(rng, {3, 3});
    auto build = [&](Graph<double>& g, const std::vector<Tensor<double>>& p) {
      (void)g;
      Rng wr(99);
      return weighted_sum(concat_cols(p[0], p[1]), wr);
    };
    CHECK(grad_check(build, {a, b}, eps, tol).pass);
  }
}
