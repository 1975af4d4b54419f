#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "cmas/autodiff.hpp"
#include "cmas/errors.hpp"
#include "cmas/optim.hpp"
#include "cmas/rng.hpp"
#include "cmas/tensor.hpp"

using namespace cmas;

namespace {

Tensor random_tensor(RngStream& rng, Shape shape, double lo = -1.5, double hi = 1.5) {
  Tensor t = Tensor::zeros(shape);
  t.values = rng.uniform_matrix(t.values.rows(), t.values.cols(), lo, hi);
  return t;
}

}  // namespace

TEST_CASE("matmul identity returns the other operand") {
  RngStream rng(7);
  Tensor a = random_tensor(rng, {3, 3});
  Tensor eye = Tensor::zeros({3, 3});
  eye.values = Matrix::Identity(3, 3);
  Tensor out = matmul(eye, a);
  CHECK(out.values.isApprox(a.values));
}

TEST_CASE("exp of zeros is all ones") {
  Tensor z = Tensor::zeros({2, 2});
  Tensor out = exp(z);
  CHECK(out.values.isApproxToConstant(1.0));
  CHECK(out.shape == Shape{2, 2});
}

TEST_CASE("sum of squares") {
  Tensor x = Tensor::row({3.0, 4.0});
  CHECK(sum(square(x)).item() == doctest::Approx(25.0));
}

TEST_CASE("shape mismatch names the op and both shapes") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({4, 2});
  CHECK_THROWS_WITH_AS(add(a, b), doctest::Contains("add"), ShapeError);
  try {
    matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    std::string msg = e.what();
    CHECK(msg.find("matmul") != std::string::npos);
    CHECK(msg.find("[2, 3]") != std::string::npos);
    CHECK(msg.find("[4, 2]") != std::string::npos);
  }
}

TEST_CASE("backward of sum(x^2) gives 2x") {
  Tape tape;
  TapeScope scope(tape);
  Tensor x = Tensor::row({3.0});
  tape.watch(x);
  Tensor loss = sum(square(x));
  Gradients g = tape.backward(loss);
  CHECK(g.of(x)(0, 0) == doctest::Approx(6.0));
}

TEST_CASE("backward of sum(c * x) gives c") {
  Tape tape;
  TapeScope scope(tape);
  Tensor x = Tensor::row({1.0, -2.0, 0.5});
  Tensor c = Tensor::row({4.0, 5.0, 6.0});
  tape.watch(x);
  Tensor loss = sum(mul(c, x));
  Gradients g = tape.backward(loss);
  CHECK(g.of(x).isApprox(c.values));
  CHECK(!g.contains(c));  // constants get no gradient
}

TEST_CASE("backward rejects non-scalar and off-tape losses") {
  Tape tape;
  TapeScope scope(tape);
  Tensor x = Tensor::row({1.0, 2.0});
  tape.watch(x);
  Tensor y = square(x);
  CHECK_THROWS_AS(tape.backward(y), TapeError);
  Tensor off = Tensor::scalar(1.0);
  CHECK_THROWS_AS(tape.backward(off), TapeError);
}

TEST_CASE("ops without an active tape yield plain values") {
  Tensor x = Tensor::row({1.0, 2.0});
  Tensor y = square(x);
  CHECK(y.node == kNoNode);
}

TEST_CASE("grad_check on sum(square) is tight") {
  Tensor x = Tensor::row({1.0, 2.0, 3.0});
  double err = grad_check([](const Tensor& t) { return sum(square(t)); }, x, 1e-5);
  CHECK(err < 1e-7);
}

TEST_CASE("grad_check on a constant function is exactly zero") {
  Tensor x = Tensor::row({1.0, 2.0});
  double err = grad_check([](const Tensor&) { return Tensor::scalar(3.5); }, x, 1e-5);
  CHECK(err == 0.0);
}

TEST_CASE("grad_check flags non-finite probes with the coordinate") {
  Tensor x = Tensor::row({1.0, 2.0});
  auto f = [](const Tensor& t) {
    Tensor s = sum(t);
    return t.values(0, 1) > 2.0 ? Tensor::scalar(std::numeric_limits<double>::infinity()) : s;
  };
  CHECK_THROWS_WITH_AS(grad_check(f, x, 1e-3), doctest::Contains("coordinate 1"), GradientError);
}

TEST_CASE("every op kind passes grad_check on 20 seeded random tensors") {
  RngStream rng(20240901);
  const double tol = 1e-5;
  for (OpKind kind : all_op_kinds()) {
    CAPTURE(op_kind_name(kind));
    for (int trial = 0; trial < 20; ++trial) {
      double err = 0.0;
      switch (kind) {
        case OpKind::matmul: {
          Tensor a = random_tensor(rng, {3, 4});
          Tensor b = random_tensor(rng, {4, 2});
          err = grad_check([&](const Tensor& t) { return sum(matmul(t, b)); }, a, 1e-5);
          err = std::max(err, grad_check([&](const Tensor& t) { return sum(matmul(a, t)); }, b, 1e-5));
          break;
        }
        case OpKind::add:
        case OpKind::sub:
        case OpKind::mul: {
          Tensor a = random_tensor(rng, {3, 4});
          Tensor b = random_tensor(rng, {3, 4});
          auto apply = [&](const Tensor& x, const Tensor& y) {
            Tensor args[] = {x, y};
            return sum(mul(forward_op(kind, args), constant_like(x, 0.5)));
          };
          err = grad_check([&](const Tensor& t) { return apply(t, b); }, a, 1e-5);
          err = std::max(err, grad_check([&](const Tensor& t) { return apply(a, t); }, b, 1e-5));
          break;
        }
        case OpKind::log: {
          Tensor a = random_tensor(rng, {3, 4}, 0.1, 2.0);
          err = grad_check([&](const Tensor& t) { return sum(log(t)); }, a, 1e-6);
          break;
        }
        case OpKind::broadcast_add_row: {
          Tensor m = random_tensor(rng, {3, 4});
          Tensor r = random_tensor(rng, {4});
          auto apply = [&](const Tensor& x, const Tensor& y) {
            return sum(square(broadcast_add_row(x, y)));
          };
          err = grad_check([&](const Tensor& t) { return apply(t, r); }, m, 1e-5);
          err = std::max(err, grad_check([&](const Tensor& t) { return apply(m, t); }, r, 1e-5));
          break;
        }
        case OpKind::relu: {
          // keep coordinates away from the kink
          Tensor a = random_tensor(rng, {3, 4});
          for (double& v : a.flat())
            if (std::abs(v) < 1e-3) v = 0.1;
          err = grad_check([&](const Tensor& t) { return sum(mul(t, relu(t))); }, a, 1e-5);
          break;
        }
        default: {
          Tensor a = random_tensor(rng, {3, 4});
          err = grad_check(
              [&](const Tensor& t) {
                Tensor args[] = {t};
                Tensor y = forward_op(kind, args);
                return y.is_scalar() ? y : sum(y);
              },
              a, 1e-5);
          break;
        }
      }
      CHECK(err < tol);
    }
  }
}

TEST_CASE("chain rule on 1-D probes: d/dx f(g(x)) multiplies jacobians") {
  // f(g(x)) with g = tanh, f = exp; derivative exp(tanh x) * (1 - tanh^2 x)
  for (double v : {-1.2, -0.3, 0.0, 0.7, 2.1}) {
    Tape tape;
    TapeScope scope(tape);
    Tensor x = Tensor::row({v});
    tape.watch(x);
    Tensor loss = sum(exp(tanh(x)));
    Gradients g = tape.backward(loss);
    double th = std::tanh(v);
    double expected = std::exp(th) * (1.0 - th * th);
    CHECK(g.of(x)(0, 0) == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("mean op backpropagates 1/N per element") {
  Tape tape;
  TapeScope scope(tape);
  Tensor x = Tensor::zeros({4, 5});
  tape.watch(x);
  Tensor loss = mean(x);
  Gradients g = tape.backward(loss);
  CHECK(g.of(x).isApproxToConstant(1.0 / 20.0));
}

TEST_CASE("tape replay determinism: identical seeds give bit-identical losses") {
  auto run = [] {
    RngStream rng(99);
    Tensor w = Tensor::zeros({4, 3});
    w.values = rng.normal_matrix(4, 3);
    Tensor x = Tensor::zeros({2, 4});
    x.values = rng.normal_matrix(2, 4);
    Tape tape;
    TapeScope scope(tape);
    tape.watch(w);
    Tensor loss = sum(square(tanh(matmul(x, w))));
    return loss.item();
  };
  double a = run();
  double b = run();
  CHECK(std::memcmp(&a, &b, sizeof(double)) == 0);
}

TEST_CASE("clamp_range behaves as hard clamp with pass-through gradient inside") {
  Tensor x = Tensor::row({-12.0, -3.0, 0.0, 9.5, 11.0});
  Tensor y = clamp_range(x, -10.0, 10.0);
  CHECK(y.values(0, 0) == doctest::Approx(-10.0));
  CHECK(y.values(0, 1) == doctest::Approx(-3.0));
  CHECK(y.values(0, 4) == doctest::Approx(10.0));
  Tensor inside = Tensor::row({-3.0, 0.5, 9.0});
  double err = grad_check([](const Tensor& t) { return sum(square(clamp_range(t, -10.0, 10.0))); },
                          inside, 1e-5);
  CHECK(err < 1e-6);
}

TEST_CASE("sgd step moves against the gradient") {
  Tensor p = Tensor::scalar(1.0);
  ParamSet params{{"p", &p}};
  Optimizer opt(OptKind::sgd, 0.1);
  Tape tape;
  TapeScope scope(tape);
  tape.watch(p);
  Tensor loss = mul(p, constant_like(p, 2.0));  // dloss/dp = 2
  Gradients g = tape.backward(loss);
  opt.step(params, g);
  CHECK(p.item() == doctest::Approx(0.8));
  CHECK(opt.step_count() == 1);
}

TEST_CASE("sgd with zero gradient leaves parameters unchanged") {
  Tensor p = Tensor::scalar(3.0);
  Tensor q = Tensor::scalar(-1.0);
  ParamSet params{{"p", &p}, {"q", &q}};
  Optimizer opt(OptKind::sgd, 0.5);
  Tape tape;
  TapeScope scope(tape);
  tape.watch(p);
  tape.watch(q);
  Tensor loss = mul(q, constant_like(q, 1.0));  // p unreachable -> zero grad
  opt.step(params, tape.backward(loss));
  CHECK(p.item() == 3.0);
  CHECK(q.item() == doctest::Approx(-1.5));
}

TEST_CASE("adam's first step has magnitude lr for any nonzero gradient") {
  for (double gval : {2.0, -0.03, 1e4}) {
    Tensor p = Tensor::scalar(1.0);
    ParamSet params{{"p", &p}};
    Optimizer opt(OptKind::adam, 1e-3);
    Tape tape;
    TapeScope scope(tape);
    tape.watch(p);
    Tensor loss = mul(p, constant_like(p, gval));
    opt.step(params, tape.backward(loss));
    // bias-corrected update: lr * g / (|g| + eps') ~= lr * sign(g)
    CHECK(std::abs(1.0 - p.item()) == doctest::Approx(1e-3).epsilon(1e-3));
  }
}

TEST_CASE("optimizer errors on a parameter with no gradient, naming it") {
  Tensor p = Tensor::scalar(1.0);
  Tensor never_watched = Tensor::scalar(2.0);
  ParamSet params{{"p", &p}, {"ghost", &never_watched}};
  Optimizer opt(OptKind::sgd, 0.1);
  Tape tape;
  TapeScope scope(tape);
  tape.watch(p);
  Tensor loss = mul(p, constant_like(p, 1.0));
  Gradients g = tape.backward(loss);
  CHECK_THROWS_WITH_AS(opt.step(params, g), doctest::Contains("ghost"), GradientError);
}

TEST_CASE("step count increases by one per step") {
  Tensor p = Tensor::scalar(1.0);
  ParamSet params{{"p", &p}};
  Optimizer opt(OptKind::adam, 1e-2);
  for (int i = 1; i <= 3; ++i) {
    Tape tape;
    TapeScope scope(tape);
    tape.watch(p);
    Tensor loss = square(p);
    opt.step(params, tape.backward(loss));
    CHECK(opt.step_count() == i);
  }
}

TEST_CASE("node ids are topologically ordered") {
  Tape tape;
  TapeScope scope(tape);
  Tensor x = Tensor::row({1.0, 2.0});
  tape.watch(x);
  Tensor y = sum(square(add(x, constant_like(x, 1.0))));
  CHECK(y.node == static_cast<long>(tape.node_count()) - 1);
  for (std::size_t i = 0; i < tape.node_count(); ++i) {
    const TapeNode& n = tape.node(static_cast<long>(i));
    for (long in : n.inputs)
      if (in >= 0) CHECK(in < static_cast<long>(i));
  }
}

TEST_CASE("corrupted backward rule is caught by grad_check") {
  debug::corrupt_backward(OpKind::tanh, true);
  Tensor x = Tensor::row({0.3, -0.8});
  double err = grad_check([](const Tensor& t) { return sum(tanh(t)); }, x, 1e-5);
  debug::corrupt_backward(OpKind::tanh, false);
  CHECK(err > 1e-2);
}
