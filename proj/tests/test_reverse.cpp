#include "test_util.hpp"

#include <doctest.h>

#include "iad/bench/problems.hpp"
#include "iad/forward.hpp"
#include "iad/ode.hpp"
#include "iad/reverse.hpp"

#include <random>

using iad::Var;
using iad::VectorX;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

VectorX<Var> prod_plus(const VectorX<Var>& x) {
  VectorX<Var> out(1);
  out(0) = x(0) * x(1) + x(0);
  return out;
}

}  // namespace

TEST_CASE("record keeps outputs and arithmetic nodes") {
  auto rec = iad::record(prod_plus, Eigen::Vector2d(2, 3));
  CHECK(rec.outputs(0) == 8.0);
  CHECK(rec.tape.arithmetic_size() == 2);
  CHECK(rec.tape.num_inputs() == 2);

  auto id = iad::record([](const VectorX<Var>& x) { return x; }, VectorXd::LinSpaced(5, 1, 5));
  CHECK(id.outputs == VectorXd::LinSpaced(5, 1, 5));
  CHECK(id.tape.arithmetic_size() == 0);
}

TEST_CASE("vjp") {
  auto rec = iad::record([](const VectorX<Var>& x) { return x(0) * x(1); }, Eigen::Vector2d(2, 3));
  CHECK(rec.tape.vjp(VectorXd::Ones(1)) == Eigen::Vector2d(3, 2));
  CHECK(rec.tape.vjp(VectorXd::Zero(1)).isZero(0.0));
  CHECK_THROWS_AS(rec.tape.vjp(VectorXd::Ones(2)), iad::DimensionError);
}

TEST_CASE("vjp matches forward Jacobian on the Rosenbrock residual") {
  std::mt19937 rng(5);
  const iad::bench::RosenbrockResidual r;
  const VectorXd alpha = VectorXd::Constant(4, 100.0);
  auto f = [&](const auto& y) {
    using S = typename std::decay_t<decltype(y)>::Scalar;
    return r(VectorX<S>(alpha.cast<S>()), y);
  };
  for (int t = 0; t < 5; ++t) {
    const VectorXd y = testing::random_vector(rng, 4, 0.5, 1.5);
    const VectorXd lambda = testing::random_vector(rng, 4);
    auto rec = iad::record(f, y);
    const VectorXd g = rec.tape.vjp(lambda);
    const VectorXd ref = iad::jacobian(f, y).transpose() * lambda;
    CHECK(testing::rel_err(g, ref) < 1e-10);
    // Adjoint buffer is cleared between sweeps.
    CHECK(rec.tape.vjp(lambda) == g);
  }
}

TEST_CASE("vjp agrees with forward mode on composed elementary ops") {
  std::mt19937 rng(9);
  auto f = [](const auto& x) {
    using S = typename std::decay_t<decltype(x)>::Scalar;
    using std::exp;
    using std::log;
    using std::sin;
    using std::sqrt;
    VectorX<S> out(3);
    out(0) = exp(x(0) * x(1)) / (S(1.0) + x(2) * x(2)) - sin(x(1));
    out(1) = sqrt(x(0) * x(0) + S(1.0)) * log(S(2.0) + x(2) * x(2)) + tanh(x(0) - x(2));
    out(2) = pow(x(0) * x(0) + S(0.5), x(1)) - S(3.0) / (x(1) * x(1) + S(1.0)) + abs(x(2));
    return out;
  };
  for (int t = 0; t < 20; ++t) {
    const VectorXd x = testing::random_vector(rng, 3);
    const VectorXd w = testing::random_vector(rng, 3);
    auto rec = iad::record(f, x);
    CHECK(testing::rel_err(rec.tape.vjp(w), iad::jacobian(f, x).transpose() * w) < 1e-10);
  }
}

TEST_CASE("gradient") {
  CHECK(iad::gradient([](const VectorX<Var>& x) {
          Var s = 0.0;
          for (Eigen::Index i = 0; i < x.size(); ++i) s += x(i) * x(i);
          return s;
        },
        Eigen::Vector3d(1, 2, 3)) == Eigen::Vector3d(2, 4, 6));
  CHECK(iad::gradient([](const VectorX<Var>&) { return Var(4.0); }, Eigen::Vector3d(1, 2, 3)).isZero(0.0));
}

TEST_CASE("gradient of an explicit heat run matches finite differences") {
  iad::bench::HeatPlateConfig cfg;
  cfg.n = 3;
  cfg.steps = 3;
  const iad::bench::HeatRhs rhs(cfg);
  const auto spec = iad::make_rk4(cfg.states(), 0, cfg.n, cfg.times(),
                                  [rhs](const auto&, const auto& u, const auto& y, const auto&) { return rhs(u, y); },
                                  iad::ConstantInit{cfg.initial_state()});
  const VectorXd x = cfg.default_inputs();
  const VectorXd g = iad::gradient(
      [&](const VectorX<Var>& xv) { return iad::integrate_explicit_final(spec, xv)(0); }, x);
  const MatrixXd fd = testing::central_fd(
      [&](const VectorXd& xx) { return VectorXd::Constant(1, iad::integrate_explicit(spec, xx).states(0, 3)); }, x);
  CHECK(testing::rel_err(g.transpose(), fd) < 1e-5);
}

TEST_CASE("replay") {
  auto ct = iad::compile([](const VectorX<Var>& x) { return x(0) * x(1); }, Eigen::Vector2d(2, 3));
  CHECK(iad::replay(ct, Eigen::Vector2d(4, 5))(0) == 20.0);
  CHECK(ct.vjp(VectorXd::Ones(1)) == Eigen::Vector2d(5, 4));
  CHECK_THROWS_AS(iad::replay(ct, VectorXd::Zero(3)), iad::DimensionError);

  std::mt19937 rng(2);
  auto f = [](const auto& x) {
    using S = typename std::decay_t<decltype(x)>::Scalar;
    VectorX<S> out(2);
    out << exp(x(0)) * x(1) - x(0) / x(1), pow(x(1), 3) + S(2.0);
    return out;
  };
  const VectorXd x0 = testing::random_vector(rng, 2, 0.5, 2.0);
  auto rec = iad::record(f, x0);
  const VectorXd before = rec.outputs;
  rec.tape.replay(x0);
  CHECK(rec.tape.output_values() == before);
}

TEST_CASE("replayed heat RHS equals direct evaluation") {
  iad::bench::HeatPlateConfig cfg;
  cfg.n = 6;
  const iad::bench::HeatRhs rhs(cfg);
  const Eigen::Index ny = cfg.states();
  auto f = [&](const VectorX<Var>& v) { return rhs(VectorX<Var>(v.head(cfg.n)), VectorX<Var>(v.tail(ny))); };
  std::mt19937 rng(4);
  VectorXd v0(cfg.n + ny);
  v0 << cfg.bottom_profile(), cfg.initial_state();
  auto ct = iad::compile(f, v0);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const VectorXd v = testing::random_vector(rng, cfg.n + ny, 300.0, 1000.0);
    const VectorXd replayed = ct.replay(v);
    const VectorXd direct = rhs(VectorX<double>(v.head(cfg.n)), VectorX<double>(v.tail(ny)));
    worst = std::max(worst, (replayed - direct).cwiseAbs().maxCoeff());
  }
  CHECK(worst == 0.0);
}

TEST_CASE("tape size is deterministic and grows linearly with recorded steps") {
  iad::bench::HeatPlateConfig cfg;
  cfg.n = 4;
  const iad::bench::HeatRhs rhs(cfg);
  const Eigen::Index ny = cfg.states();
  VectorXd v0(cfg.n + ny);
  v0 << cfg.bottom_profile(), cfg.initial_state();
  auto steps = [&](int count) {
    const double dt = 50.0;
    return iad::record(
               [&](const VectorX<Var>& v) {
                 const VectorX<Var> u = v.head(cfg.n);
                 VectorX<Var> y = v.tail(ny);
                 for (int k = 0; k < count; ++k) y = y + rhs(u, y) * Var(dt);
                 return y;
               },
               v0)
        .tape.arithmetic_size();
  };
  const auto one = steps(1);
  CHECK(one > 0);
  CHECK(steps(1) == one);
  CHECK(steps(10) == 10 * one);
}

TEST_CASE("tape errors") {
  const Var a(1.0, 0);
  CHECK_THROWS_AS(a * a, iad::TapeError);

  iad::Tape tape;
  tape.set_node_limit(4);
  iad::TapeActivation act(tape);
  const Var x = tape.input(2.0);
  Var y = x * x;
  y = y * x;
  y = y * x;
  CHECK_THROWS_AS(y = y * x, iad::TapeLimitError);
}
