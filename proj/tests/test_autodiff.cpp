#include <cmath>
#include <vector>

#include <doctest.h>

#include "helpers.hpp"
#include "ssp/optim.hpp"

using namespace ssp;

TEST_CASE("op examples") {
  Graph g;
  CHECK(sigmoid(g.constant(Tensor::scalar(0.0))).value().item() == 0.5);
  CHECK(softmax(g.constant(Tensor::vector({0, 0})), 0).value() == Tensor::vector({0.5, 0.5}));
  const Tensor m = Tensor::matrix({{3, 1}, {4, 1}});
  CHECK(matmul(g.constant(Tensor::identity(2)), g.constant(m)).value() == m);
  CHECK(transpose(g.constant(m)).value() == Tensor::matrix({{3, 4}, {1, 1}}));
  CHECK(affine(g.constant(Tensor::vector({1, 2})), 2.0, 1.0).value() == Tensor::vector({3, 5}));
  CHECK(relu(g.constant(Tensor::vector({-1, 2}))).value() == Tensor::vector({0, 2}));
  CHECK(reciprocal(g.constant(Tensor::vector({4}))).value() == Tensor::vector({0.25}));
  const std::vector<int> ids = {1, 1, 0};
  CHECK(gather_rows(g.constant(m), ids).value() == Tensor::matrix({{4, 1}, {4, 1}, {3, 1}}));
  CHECK(row_scale(g.constant(m), g.constant(Tensor::vector({2, 0}))).value() == Tensor::matrix({{6, 2}, {0, 0}}));
  const Node parts[] = {g.constant(m), g.constant(m)};
  CHECK(concat(parts, 1).value().shape() == Shape{2, 4});
  CHECK(concat(parts, 0).value().shape() == Shape{4, 2});
}

TEST_CASE("softmax rows and columns sum to one") {
  const Tensor x = test::random_tensor({5, 7}, 3, -5, 5);
  for (int axis : {0, 1}) {
    const Tensor s = softmax(x, axis);
    const std::size_t outer = axis == 0 ? 7 : 5, inner = axis == 0 ? 5 : 7;
    for (std::size_t o = 0; o < outer; ++o) {
      double sum = 0.0;
      for (std::size_t i = 0; i < inner; ++i) sum += axis == 0 ? s.at(i, o) : s.at(o, i);
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-14));
    }
  }
  // Large logits stay finite.
  CHECK(softmax(Tensor::vector({1000, 0}), 0)[0] == 1.0);
}

TEST_CASE("cross entropy examples") {
  const std::vector<int> t2 = {2};
  CHECK(cross_entropy(Tensor::matrix({{0.7, 0.7, 0.7, 0.7}}), t2) == doctest::Approx(std::log(4.0)).epsilon(1e-15));
  CHECK(cross_entropy(Tensor::matrix({{0.7, 0.7, 0.7, 0.7}}), t2) == doctest::Approx(1.386294).epsilon(1e-6));

  // log(1 + e^-20) in 40-digit decimal arithmetic.
  const std::vector<int> t0 = {0};
  CHECK(cross_entropy(Tensor::matrix({{10, -10}}), t0) == doctest::Approx(2.0611536203143807e-9).epsilon(1e-9));

  const Tensor two = Tensor::matrix({{1.0, 2.0, 0.5}, {3.0, -1.0, 0.0}});
  const std::vector<int> with_ignored = {1, 255};
  const std::vector<int> first = {1};
  CHECK(cross_entropy(two, with_ignored, 255) == cross_entropy(two.row_slice(0, 1), first));
  const std::vector<int> all_ignored = {255, 255};
  CHECK_THROWS(cross_entropy(two, all_ignored, 255));
  const std::vector<int> bad = {3, 0};
  CHECK_THROWS(cross_entropy(two, bad));
}

TEST_CASE("gradient examples") {
  Variable x("x", Tensor::scalar(0.0), true);
  {
    Graph g;
    g.backward(sigmoid(g.param(x)));
  }
  CHECK(x.grad.item() == 0.25);

  Variable w("w", Tensor({1, 1}, {0.3}), true);
  {
    Graph g;
    const Node z = g.constant(Tensor::matrix({{1}, {2}, {3}}));
    const Node ones = g.constant(Tensor::full({3, 1}, 1.0));
    const Node wcol = matmul(ones, g.param(w));  // 3x1 filled with w
    g.backward(mean(mul(wcol, z)));
  }
  CHECK(w.grad.item() == doctest::Approx(2.0).epsilon(1e-15));
}

TEST_CASE("gradients accumulate only into trainable variables") {
  Variable a("a", Tensor::vector({1, 2}), true);
  Variable b("b", Tensor::vector({3, 4}), false);
  for (int rep = 0; rep < 2; ++rep) {
    Graph g;
    g.backward(mean(mul(g.param(a), g.param(b))));
  }
  CHECK(a.grad == Tensor::vector({3.0, 4.0}));
  CHECK(b.grad == Tensor({2}));

  Variable c("c", Tensor::vector({1, 2}), true);
  {
    Graph g;
    g.backward(mean(g.frozen(c)));
  }
  CHECK(c.grad == Tensor({2}));
}

TEST_CASE("backward requires a scalar root and clears the tape") {
  Graph g;
  const Node v = g.constant(Tensor::vector({1, 2}));
  CHECK_THROWS(g.backward(v));
  Variable x("x", Tensor::scalar(1.0), true);
  g.backward(mean(g.param(x)));
  CHECK(g.size() == 0);
}

TEST_CASE("shape errors name the op and both shapes") {
  Graph g;
  try {
    (void)add(g.constant(Tensor({2, 3})), g.constant(Tensor({3, 2})));
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("add") != std::string::npos);
    CHECK(msg.find("2x3") != std::string::npos);
    CHECK(msg.find("3x2") != std::string::npos);
  }
  CHECK_THROWS_AS(matmul(g.constant(Tensor({2, 3})), g.constant(Tensor({2, 3}))), ShapeError);
  CHECK_THROWS_AS(softmax(g.constant(Tensor({2, 3})), 2), std::invalid_argument);
}

TEST_CASE("non-finite forward values raise NumericError") {
  Graph g;
  CHECK_THROWS_AS(reciprocal(g.constant(Tensor::vector({0.0}))), NumericError);
}

TEST_CASE("finite differences") {
  const auto square = [](const Tensor& x) { return x[0] * x[0]; };
  CHECK(finite_diff_grad(square, Tensor::vector({3.0}))[0] == doctest::Approx(6.0).epsilon(1e-8));
  const auto sig = [](const Tensor& x) { return sigmoid(x)[0]; };
  CHECK(std::abs(finite_diff_grad(sig, Tensor::vector({0.0}))[0] - 0.25) < 1e-8);
}

TEST_CASE("reverse mode matches finite differences on a composite expression") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const Tensor a0 = test::random_tensor({3, 4}, seed), b0 = test::random_tensor({4, 2}, seed + 10);
    const auto loss = [&](Graph& g, Node a, Node b) {
      Node h = sigmoid(matmul(a, b));
      Node s = softmax(mul(h, cos(h)), 1);
      return mean(add(s, sin(scale(h, 3.0))));
    };
    Variable a("a", a0, true), b("b", b0, true);
    {
      Graph g;
      g.backward(loss(g, g.param(a), g.param(b)));
    }
    const auto fa = [&](const Tensor& x) {
      Graph g;
      Variable v("a", x, false);
      return loss(g, g.frozen(v), g.constant(b0)).value().item();
    };
    const auto fb = [&](const Tensor& x) {
      Graph g;
      Variable v("b", x, false);
      return loss(g, g.constant(a0), g.frozen(v)).value().item();
    };
    CHECK(relative_error(a.grad, finite_diff_grad(fa, a0)) < 1e-4);
    CHECK(relative_error(b.grad, finite_diff_grad(fb, b0)) < 1e-4);
  }
}

TEST_CASE("gradcheck battery") {
  const GradcheckReport rep = run_gradcheck(0);
  CHECK(rep.entries.size() >= 20);
  for (const auto& e : rep.entries) {
    INFO(e.name);
    CHECK(e.max_rel_error < 1e-4);
  }
  CHECK(rep.passed());
}

TEST_CASE("relative error") {
  CHECK(relative_error(Tensor::vector({1, 2}), Tensor::vector({1, 2})) == 0.0);
  CHECK(relative_error(Tensor::vector({0, 0}), Tensor::vector({0, 0})) == 0.0);
  CHECK(relative_error(Tensor::vector({3, 4}), Tensor::vector({0, 0})) == doctest::Approx(1.0));
  CHECK_THROWS_AS(relative_error(Tensor::vector({1}), Tensor::vector({1, 2})), ShapeError);
}

TEST_CASE("poly learning rate") {
  OptimizerState s;
  s.base_lr = 1e-3;
  s.power = 0.9;
  s.total_steps = 100;
  CHECK(poly_lr(s) == 1e-3);
  s.step_count = 50;
  CHECK(poly_lr(s) == doctest::Approx(5.358867312681466e-4).epsilon(1e-12));
  s.step_count = 100;
  CHECK(poly_lr(s) == 0.0);
}

TEST_CASE("sgd step") {
  const auto step = [](double p0, double grad, double lr, double wd) {
    Variable p("p", Tensor::scalar(p0), true);
    p.grad = Tensor::scalar(grad);
    OptimizerState s;
    s.base_lr = lr;
    s.weight_decay = wd;
    s.total_steps = 10;
    Variable* params[] = {&p};
    sgd_step(params, s);
    CHECK(s.step_count == 1);
    CHECK(p.grad.item() == 0.0);
    return p.value.item();
  };
  CHECK(step(1.0, 0.0, 0.1, 0.0) == 1.0);
  CHECK(step(1.0, 2.0, 0.1, 0.0) == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(step(1.0, 0.0, 0.1, 1e-4) == doctest::Approx(0.99999).epsilon(1e-15));

  Variable frozen("f", Tensor::scalar(1.0), false);
  frozen.grad = Tensor::scalar(5.0);
  OptimizerState s;
  Variable* params[] = {&frozen};
  sgd_step(params, s);
  CHECK(frozen.value.item() == 1.0);

  Variable nan_grad("n", Tensor::scalar(1.0), true);
  nan_grad.grad = Tensor::scalar(1e308);
  OptimizerState big;
  big.base_lr = 1e308;
  Variable* p2[] = {&nan_grad};
  CHECK_THROWS_AS(sgd_step(p2, big), NumericError);
}
