#include "test_util.hpp"

#include <doctest.h>

#include "iad/bench/problems.hpp"
#include "iad/newton.hpp"

#include <random>

using iad::VectorX;
using Eigen::VectorXd;

namespace {

struct SqrtResidual {
  template <typename S>
  VectorX<S> operator()(const VectorX<S>& x, const VectorX<S>& y) const {
    return VectorX<S>(y.cwiseProduct(y) - x);
  }
};

struct Identity {
  template <typename S>
  VectorX<S> operator()(const VectorX<S>& x, const VectorX<S>& y) const {
    return VectorX<S>(y - x);
  }
};

}  // namespace

TEST_CASE("newton finds the square root") {
  const auto spec = iad::make_residual_spec(1, 1, SqrtResidual{});
  const auto res = iad::newton_solve(spec, VectorX<double>(VectorXd::Constant(1, 4.0)), VectorXd::Ones(1));
  CHECK(res.y(0) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(res.stats.residual_norm <= 1e-10);
  CHECK(res.stats.iterations > 0);
  CHECK(res.stats.function_evals > res.stats.iterations);
}

TEST_CASE("newton on a linear residual takes one iteration") {
  const auto spec = iad::make_residual_spec(3, 3, Identity{});
  const VectorXd x = Eigen::Vector3d(1, -2, 7);
  const auto res = iad::newton_solve(spec, VectorX<double>(x), Eigen::Vector3d(100, 4, -3));
  CHECK(res.stats.iterations == 1);
  CHECK((res.y - x).lpNorm<Eigen::Infinity>() < 1e-12);
}

TEST_CASE("newton on the Rosenbrock residual") {
  const auto spec = iad::make_residual_spec(4, 4, iad::bench::RosenbrockResidual{});
  const auto res = iad::newton_solve(spec, VectorX<double>(VectorXd::Constant(4, 100.0)), VectorXd::Constant(4, 1.2));
  CHECK((res.y - VectorXd::Ones(4)).lpNorm<Eigen::Infinity>() < 1e-9);

  // Restarting from the solution needs at most one iteration.
  const auto again = iad::newton_solve(spec, VectorX<double>(VectorXd::Constant(4, 100.0)), res.y);
  CHECK(again.stats.iterations <= 1);
}

TEST_CASE("newton converges on Rosenbrock from perturbed guesses for every benchmark size") {
  std::mt19937 rng(42);
  for (iad::Index n = 2; n <= 128; n *= 2) {
    const auto spec = iad::make_residual_spec(n, n, iad::bench::RosenbrockResidual{});
    const VectorXd y0 = VectorXd::Ones(n) + 0.2 * testing::random_vector(rng, n, 0.0, 1.0);
    const auto res = iad::newton_solve(spec, VectorX<double>(VectorXd::Constant(n, 100.0)), y0);
    CHECK((res.y - VectorXd::Ones(n)).lpNorm<Eigen::Infinity>() < 1e-8);
  }
}

TEST_CASE("supplied drdy is used") {
  int calls = 0;
  auto drdy = [&calls](const auto& x, const auto& y) {
    using S = typename std::decay_t<decltype(y)>::Scalar;
    ++calls;
    (void)x;
    iad::MatrixX<S> j = iad::MatrixX<S>::Zero(1, 1);
    j(0, 0) = S(2.0) * y(0);
    return j;
  };
  const auto spec = iad::make_residual_spec(1, 1, SqrtResidual{}, drdy);
  const auto res = iad::newton_solve(spec, VectorX<double>(VectorXd::Constant(1, 9.0)), VectorXd::Ones(1));
  CHECK(res.y(0) == doctest::Approx(3.0));
  CHECK(calls == res.stats.iterations);
}

TEST_CASE("newton failures") {
  const auto spec = iad::make_residual_spec(1, 1, SqrtResidual{});
  // y^2 = -1 has no real root.
  CHECK_THROWS_AS(iad::newton_solve(spec, VectorX<double>(VectorXd::Constant(1, -1.0)), VectorXd::Ones(1)),
                  iad::Error);
  // Zero derivative at the starting point.
  CHECK_THROWS_AS(iad::newton_solve(spec, VectorX<double>(VectorXd::Constant(1, 4.0)), VectorXd::Zero(1)),
                  iad::SingularJacobianError);

  iad::SolverConfig few;
  few.max_iterations = 1;
  CHECK_THROWS_AS(iad::newton_solve(spec, VectorX<double>(VectorXd::Constant(1, 1e6)), VectorXd::Ones(1), few),
                  iad::ConvergenceError);

  iad::SolverConfig bad;
  bad.tolerance = 0.0;
  CHECK_THROWS_AS(iad::newton_solve(spec, VectorX<double>(VectorXd::Constant(1, 4.0)), VectorXd::Ones(1), bad),
                  iad::Error);
}
