// Acceptance suite: one PASS/FAIL line per criterion, exit code 1 if any fail.

#include "iad/bench/problems.hpp"
#include "iad/bench/runner.hpp"
#include "iad/external.hpp"
#include "iad/fixed_dual.hpp"
#include "iad/implicit.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#ifndef IAD_BENCH_EXE
#define IAD_BENCH_EXE "iad-bench"
#endif

using namespace iad;
using namespace iad::bench;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using Clock = std::chrono::steady_clock;

namespace {

struct Result {
  bool pass = true;
  std::ostringstream detail;
  std::vector<std::string> failed;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      failed.push_back(what);
    }
  }
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", v);
  return buf;
}

/// Agreement test used throughout: relative to max|ref|, or absolute below 1e-8.
bool agrees(const MatrixXd& a, const MatrixXd& ref, double rel, double abs_on_zero, double* err = nullptr) {
  const double e = relative_error(a, ref);
  if (err) *err = e;
  const bool zero_ref = ref.size() == 0 || ref.cwiseAbs().maxCoeff() <= 1e-8;
  return e <= (zero_ref ? abs_on_zero : rel);
}

MatrixXd random_matrix(std::mt19937& rng, Index r, Index c, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  MatrixXd m(r, c);
  for (Index j = 0; j < c; ++j)
    for (Index i = 0; i < r; ++i) m(i, j) = u(rng);
  return m;
}

VectorXd random_vector(std::mt19937& rng, Index n, double lo = -1.0, double hi = 1.0) {
  return random_matrix(rng, n, 1, lo, hi).col(0);
}

VectorX<Dual<double>> seeded(const VectorXd& x) { return lift(VectorX<double>(x), MatrixXd::Identity(x.size(), x.size())); }

std::map<std::string, BenchRecord> by_strategy(const std::vector<BenchRecord>& records) {
  std::map<std::string, BenchRecord> out;
  for (const auto& r : records) out[r.strategy] = r;
  return out;
}

// ---------------------------------------------------------------------------

Result rosenbrock_agreement() {
  Result res;
  const auto t0 = Clock::now();
  RunOptions opts;
  opts.sizes = {2, 4, 8, 16};
  opts.samples = 1;
  opts.keep_derivatives = true;
  const auto records = run_rosenbrock(opts);
  const std::vector<std::string> ad = {"direct-forward", "direct-reverse", "implicit-forward", "implicit-reverse"};
  double worst_ad = 0.0;
  double worst_fd = 0.0;
  for (Index n : opts.sizes) {
    std::map<std::string, MatrixXd> jac;
    for (const auto& r : records) {
      if (r.n != n) continue;
      res.require(r.error.empty(), r.strategy + " n=" + std::to_string(n) + ": " + r.error);
      if (r.derivative) jac[r.strategy] = *r.derivative;
    }
    for (std::size_t a = 0; a < ad.size(); ++a) {
      for (std::size_t b = a + 1; b < ad.size(); ++b) {
        if (!jac.count(ad[a]) || !jac.count(ad[b])) {
          res.require(false, "missing Jacobian at n=" + std::to_string(n));
          continue;
        }
        double e = 0.0;
        res.require(agrees(jac[ad[a]], jac[ad[b]], 1e-8, 1e-10, &e), ad[a] + " vs " + ad[b] + " n=" + std::to_string(n));
        worst_ad = std::max(worst_ad, e);
      }
    }
    if (jac.count("fd-central") && jac.count("implicit-forward")) {
      double e = 0.0;
      res.require(agrees(jac["fd-central"], jac["implicit-forward"], 1e-4, 1e-4, &e), "fd n=" + std::to_string(n));
      worst_fd = std::max(worst_fd, e);
    }
  }
  const double elapsed = seconds_since(t0);
  res.require(elapsed < 30.0, "runtime");
  res.detail << "n=2,4,8,16 worst AD pair " << sci(worst_ad) << " (limit 1e-8, 1e-10 abs on zeros), FD "
             << sci(worst_fd) << " (limit 1e-4), " << sci(elapsed) << " s (limit 30)";
  return res;
}

Result solver_path_independence() {
  Result res;
  const Index n = 8;
  const auto spec = make_residual_spec(n, n, RosenbrockResidual{});
  const VectorXd x = RosenbrockConfig{n}.x();
  std::mt19937 rng(0);
  const VectorXd guess = (1.0 + 0.2 * random_vector(rng, n, 0.0, 1.0).array()).matrix();

  auto implicit_jacobians = [&](const VectorXd& y0, double tol) {
    SolverConfig cfg;
    cfg.tolerance = tol;
    const PrimalSolver solve = newton_solver(spec, y0, cfg);
    const MatrixXd fwd = dual_partials(implicit(spec, solve, seeded(x)), n);
    Recording rec = record([&](const VectorX<Var>& xv) { return implicit(spec, solve, xv); }, x);
    const MatrixXd rev = rec.tape.vjp_many(MatrixXd::Identity(n, n)).transpose();
    return std::pair{fwd, rev};
  };
  auto direct_jacobian = [&](const VectorXd& y0, double tol) {
    SolverConfig cfg;
    cfg.tolerance = tol;
    return jacobian_chunked<4>([&](const auto& xv) { return newton_solve(spec, xv, y0, cfg).y; }, x);
  };

  const auto [base_fwd, base_rev] = implicit_jacobians(guess, 1e-10);
  const MatrixXd base_direct = direct_jacobian(guess, 1e-10);
  const double scale = std::max(1.0, base_fwd.cwiseAbs().maxCoeff());
  double worst_implicit = 0.0;
  double worst_direct = 0.0;
  for (double factor : {0.8, 1.2}) {
    for (double tol : {1e-10, 1e-11, 1e-12, 1e-13}) {
      const VectorXd y0 = guess * factor;
      const auto [fwd, rev] = implicit_jacobians(y0, tol);
      worst_implicit = std::max({worst_implicit, (fwd - base_fwd).cwiseAbs().maxCoeff() / scale,
                                 (rev - base_rev).cwiseAbs().maxCoeff() / scale});
      worst_direct = std::max(worst_direct, (direct_jacobian(y0, tol) - base_direct).cwiseAbs().maxCoeff() / scale);
    }
  }
  res.require(worst_implicit <= 1e-9, "implicit derivatives moved");
  res.detail << "n=8, guess x{0.8,1.2}, tol 1e-10..1e-13: implicit change " << sci(worst_implicit)
             << " (limit 1e-9 x max(1,|J|)); direct-forward change " << sci(worst_direct) << " (informational)";
  return res;
}

Result rosenbrock_ordering() {
  Result res;
  RunOptions opts;
  opts.sizes = {128};
  opts.samples = 15;
  opts.max_seconds = 10.0;
  const auto recs = by_strategy(run_rosenbrock(opts));
  auto t = [&](const std::string& s) -> double {
    const auto it = recs.find(s);
    if (it == recs.end() || !it->second.median_seconds) {
      res.require(false, s + " has no timing" + (it == recs.end() ? "" : ": " + it->second.error));
      return std::nan("");
    }
    return *it->second.median_seconds;
  };
  const double ir = t("implicit-reverse");
  const double ifw = t("implicit-forward");
  const double df = t("direct-forward");
  const double dr = t("direct-reverse");
  const double fd = t("fd-central");
  res.require(ir < ifw, "implicit-reverse < implicit-forward");
  res.require(ifw < df, "implicit-forward < direct-forward");
  res.require(dr > std::max({ir, ifw, df, fd}), "direct-reverse slowest");
  res.detail << "n=128 medians: implicit-reverse " << sci(ir) << " s, implicit-forward " << sci(ifw)
             << " s, direct-forward " << sci(df) << " s, fd-central " << sci(fd) << " s, direct-reverse " << sci(dr)
             << " s";
  return res;
}

struct LinearRhs {
  template <typename V, typename T>
  V operator()(const V& xd, const V&, const V& y, const T&) const {
    return V(y * xd(0));
  }
};

Result unsteady_adjoint() {
  Result res;
  const auto t0 = Clock::now();
  const int steps = 10;
  const double dt = 0.1;
  const double a = -1.0;
  const auto spec = make_implicit_euler(1, 1, 0, VectorXd::LinSpaced(steps + 1, 0.0, steps * dt), LinearRhs{},
                                        ConstantInit{VectorXd::Ones(1)});
  const VectorXd x = VectorXd::Constant(1, a);
  const Trajectory traj = integrate_implicit(spec, x);
  const double grad = ode_reverse_sweep(spec, traj, x, VectorXd::Ones(1))(0);
  const double exact = 1.0 * steps * dt * std::pow(1.0 - a * dt, -steps - 1);
  const double scalar_err = std::abs(grad - exact) / std::abs(exact);
  res.require(scalar_err <= 1e-10, "scalar closed form");
  res.require(std::abs(grad - 0.3504939) <= 5e-8, "published value 0.3504939");

  double worst_fwd = 0.0;
  double worst_fd = 0.0;
  for (Index n : {4, 5}) {
    RunOptions opts;
    opts.sizes = {n};
    opts.samples = 1;
    opts.keep_derivatives = true;
    opts.strategies = {"fd-central", "implicit-forward", "per-step-reverse"};
    const auto recs = by_strategy(run_heat_implicit(opts));
    const MatrixXd& fwd = *recs.at("implicit-forward").derivative;
    double e = 0.0;
    res.require(agrees(*recs.at("per-step-reverse").derivative, fwd, 1e-8, 1e-10, &e), "reverse vs forward sweep");
    worst_fwd = std::max(worst_fwd, e);
    res.require(agrees(*recs.at("fd-central").derivative, fwd, 1e-4, 1e-4, &e), "reverse vs FD");
    worst_fd = std::max(worst_fd, e);
  }
  const double elapsed = seconds_since(t0);
  res.require(elapsed < 10.0, "runtime");
  res.detail << "scalar gradient " << grad << " vs closed form " << exact << " (rel " << sci(scalar_err)
             << ", limit 1e-10); heat n=4,5: reverse vs forward " << sci(worst_fwd) << " (limit 1e-8), vs FD "
             << sci(worst_fd) << " (limit 1e-4), " << sci(elapsed) << " s (limit 10)";
  return res;
}

Result adjoint_memory() {
  Result res;
  auto bdf2 = [](int steps) {
    auto residual = [](const auto& xd, const auto&, const auto& y, const auto& yprev, const auto& tw) {
      using S = typename std::decay_t<decltype(y)>::Scalar;
      const S h = tw(0) - tw(1);
      VectorX<S> r(1);
      r(0) = y(0) - S(4.0 / 3.0) * yprev(0) + S(1.0 / 3.0) * yprev(1) - S(2.0 / 3.0) * h * xd(0) * y(0);
      return r;
    };
    return StepResidualSpec<decltype(residual), ConstantInit>{
        1, 1, 0, 2, VectorXd::LinSpaced(steps + 1, 0.0, 0.01 * steps), residual, ConstantInit{VectorXd::Ones(1)}};
  };
  std::ostringstream counts;
  for (Index steps : {100, 1000}) {
    HeatPlateConfig cfg;
    cfg.n = 4;
    cfg.steps = steps;
    const auto spec = heat_implicit_spec(cfg);
    const VectorXd x = cfg.default_inputs();
    const Trajectory traj = integrate_implicit(spec, x);
    AdjointWorkspace ws;
    ode_reverse_sweep(spec, traj, x, VectorXd::Unit(cfg.states(), 0), &ws);
    ode_reverse_sweep(spec, traj, x, VectorXd::Unit(cfg.states(), 1), &ws);
    res.require(ws.lambda_buffer_count() == 2 && ws.buffer_allocations() == 2, "heat s=1 buffers");

    const auto b = bdf2(static_cast<int>(steps));
    const VectorXd xa = VectorXd::Constant(1, -0.5);
    AdjointWorkspace ws2;
    ode_reverse_sweep(b, integrate_implicit(b, xa), xa, VectorXd::Ones(1), &ws2);
    res.require(ws2.lambda_buffer_count() == 3 && ws2.buffer_allocations() == 3, "bdf2 s=2 buffers");
    counts << " n_t=" << steps << ": s=1 holds " << ws.lambda_buffer_count() << " (allocated "
           << ws.buffer_allocations() << " over two sweeps), s=2 holds " << ws2.lambda_buffer_count() << ";";
  }
  res.detail << "state-sized adjoint vectors" << counts.str() << " expected s+1";
  return res;
}

Result explicit_per_step() {
  Result res;
  HeatPlateConfig cfg;
  cfg.n = 5;
  cfg.steps = 200;
  const auto spec = heat_explicit_spec(cfg);
  const VectorXd x = cfg.default_inputs();
  const Trajectory traj = integrate_explicit(spec, x);
  SweepStats stats;
  const VectorXd g = explicit_reverse_per_step(spec, traj, x, VectorXd::Unit(cfg.states(), 0), {}, &stats);
  Recording direct = record([&](const VectorX<Var>& xv) { return integrate_explicit_final(spec, xv)(0); }, x);
  const VectorXd ref = direct.tape.vjp(VectorXd::Ones(1));
  double e = 0.0;
  res.require(agrees(g, ref, 1e-9, 1e-9, &e), "gradient");
  const double ratio = static_cast<double>(stats.peak_tape_nodes) / static_cast<double>(direct.tape.size());
  res.require(ratio <= 0.01, "tape ratio");
  res.detail << "heat n=5 RK4 200 steps: gradient rel " << sci(e) << " (limit 1e-9); tape " << stats.peak_tape_nodes
             << " vs " << direct.tape.size() << " nodes = " << sci(100.0 * ratio) << "% (limit 1%)";
  return res;
}

Result explicit_ordering() {
  Result res;
  RunOptions opts;
  opts.sizes = {11};
  opts.samples = 5;
  opts.max_seconds = 20.0;
  opts.fd_estimate = true;
  const auto recs = by_strategy(run_heat_explicit(opts));
  auto t = [&](const std::string& s) -> double {
    const auto it = recs.find(s);
    if (it == recs.end() || !it->second.median_seconds) {
      res.require(false, s + " has no timing");
      return std::nan("");
    }
    return *it->second.median_seconds;
  };
  const double ps = t("per-step-reverse");
  const double dr = t("direct-reverse");
  const double df = t("direct-forward");
  const double fd = t("fd-central");
  res.require(ps < dr, "per-step-reverse < direct-reverse");
  res.require(dr < df, "direct-reverse < direct-forward");
  res.require(df < fd, "direct-forward < fd-estimate");
  res.detail << "heat-explicit n=11, 1000 steps, 11000 inputs: per-step-reverse " << sci(ps) << " s, direct-reverse "
             << sci(dr) << " s, direct-forward " << sci(df) << " s, fd-estimate " << sci(fd) << " s";
  return res;
}

/// z = tanh(W x) + c.
struct RandomMap {
  MatrixXd w;
  VectorXd c;
  VectorXd operator()(const VectorXd& x) const { return VectorXd((w * x).array().tanh().matrix() + c); }
  MatrixXd jacobian(const VectorXd& x) const {
    const VectorXd s = (1.0 - (w * x).array().tanh().square()).matrix();
    return s.asDiagonal() * w;
  }
};

ExternalFunctionSpec provider_spec(const RandomMap& m, int kind) {
  const Index nx = m.w.cols();
  const Index nz = m.w.rows();
  switch (kind) {
    case 0:
      return {nx, nz, m, JacobianProvider{[m](const VectorXd& x) { return m.jacobian(x); }}};
    case 1:
      return {nx, nz, m, JvpProvider{[m](const VectorXd& x, const VectorXd& v) { return VectorXd(m.jacobian(x) * v); }}};
    case 2:
      return {nx, nz, m,
              VjpProvider{[m](const VectorXd& x, const VectorXd& w) { return VectorXd(m.jacobian(x).transpose() * w); }}};
    default:
      return {nx, nz, m, FiniteDifference{}};
  }
}

Result external_rule() {
  Result res;
  std::mt19937 rng(2024);
  std::uniform_int_distribution<int> dim(1, 8);
  double worst_exact = 0.0;
  double worst_fd = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const int nx = dim(rng);
    const int nz = dim(rng);
    const RandomMap m{random_matrix(rng, nz, nx), random_vector(rng, nz)};
    const VectorXd x = random_vector(rng, nx);
    const MatrixXd seeds = random_matrix(rng, nx, 3);
    const VectorXd zbar = random_vector(rng, nz);
    const MatrixXd fwd_ref = m.jacobian(x) * seeds;
    const VectorXd rev_ref = m.jacobian(x).transpose() * zbar;
    const auto xd = make_duals(VectorX<double>(x), MatrixX<double>(seeds));
    for (int kind = 0; kind < 4; ++kind) {
      const auto spec = provider_spec(m, kind);
      const MatrixXd fwd = dual_partials(external(spec, xd), 3);
      Recording rec = record([&](const VectorX<Var>& xv) { return external(spec, xv); }, x);
      const VectorXd rev = rec.tape.vjp(zbar);
      const double e = std::max(relative_error(fwd, fwd_ref), relative_error(rev, rev_ref));
      const double limit = kind == 3 ? 1e-4 : 1e-10;
      res.require(e <= limit, "trial " + std::to_string(trial) + " provider " + std::to_string(kind));
      double& worst = kind == 3 ? worst_fd : worst_exact;
      worst = std::max(worst, e);
    }
  }
  int count_checks = 0;
  for (int nx : {1, 3, 6}) {
    for (int k : {1, 2, 4, 9}) {
      const RandomMap m{random_matrix(rng, 2, nx), VectorXd::Zero(2)};
      const auto spec = provider_spec(m, 3);
      const auto xd = make_duals(VectorX<double>(random_vector(rng, nx)), MatrixX<double>(random_matrix(rng, nx, k)));
      spec.reset_primal_calls();
      external(spec, xd);
      res.require(spec.primal_calls() == std::min(nx, k) + 1,
                  "FD calls nx=" + std::to_string(nx) + " k=" + std::to_string(k));
      ++count_checks;
    }
  }
  res.detail << "20 random specs x {J, JVP, VJP, FD}, forward and reverse: exact providers " << sci(worst_exact)
             << " (limit 1e-10), FD " << sci(worst_fd) << " (limit 1e-4); FD primal calls = min(nx,k)+1 in "
             << count_checks << " cases";
  return res;
}

Result fixed_point_and_linear() {
  Result res;
  auto f = [](const auto& x, const auto& y) {
    using S = typename std::decay_t<decltype(y)>::Scalar;
    return VectorX<S>(x + y * S(0.5));
  };
  const auto fp = make_fixed_point_spec(1, 1, f);
  const VectorXd x1 = VectorXd::Constant(1, 3.0);
  const double dfwd = fixed_point_forward(fp, VectorXd::Zero(1), seeded(x1))(0).partials(0);
  const ImplicitNode node(fp, x1, fixed_point_solve(fp, x1, VectorXd::Zero(1)));
  const double drev = fixed_point_reverse(fp, node, VectorXd::Ones(1))(0);
  const double fp_err = std::max(std::abs(dfwd - 2.0), std::abs(drev - 2.0));
  res.require(fp_err <= 1e-12, "fixed point dy/dx = 2");

  std::mt19937 rng(99);
  const Index n = 10;
  auto r = [n](const auto& xx, const auto& y) {
    using S = typename std::decay_t<decltype(y)>::Scalar;
    const auto am = xx.head(n * n).reshaped(n, n);
    return VectorX<S>(am * y - xx.tail(n));
  };
  const auto spec = make_residual_spec(n * n + n, n, r);
  const auto solve = newton_solver(spec, VectorXd::Zero(n));
  double worst = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    const MatrixXd a = random_matrix(rng, n, n) + 4.0 * MatrixXd::Identity(n, n);
    const VectorXd b = random_vector(rng, n);
    VectorXd x(n * n + n);
    x << a.reshaped(), b;
    const MatrixXd seeds = random_matrix(rng, n * n + n, 4);
    const VectorX<Dual<double>> xd = lift(VectorX<double>(x), seeds);
    MatrixX<Dual<double>> ad(n, n);
    for (Index j = 0; j < n; ++j)
      for (Index i = 0; i < n; ++i) ad(i, j) = xd(j * n + i);
    const VectorX<Dual<double>> bd = xd.tail(n);
    const MatrixXd lin_fwd = dual_partials(linear_solve(ad, bd), 4);
    const MatrixXd gen_fwd = dual_partials(implicit_forward(spec, solve, xd), 4);

    const VectorXd ybar = random_vector(rng, n);
    const LinearAdjoint adj = linear_rule_reverse(LinearNode(a, b), ybar);
    VectorXd lin_rev(n * n + n);
    lin_rev << adj.abar.reshaped(), adj.bbar;
    const VectorXd gen_rev = implicit_reverse(spec, ImplicitNode(spec, x, solve(x)), ybar);
    worst = std::max({worst, relative_error(lin_fwd, gen_fwd), relative_error(lin_rev, gen_rev)});
  }
  res.require(worst <= 1e-10, "linear vs generic");
  res.detail << "fixed point y = x + y/2: dy/dx error " << sci(fp_err) << " (limit 1e-12); linear vs generic rules on 5 "
             << "random 10x10 systems " << sci(worst) << " (limit 1e-10)";
  return res;
}

Result check_command() {
  Result res;
  const auto t0 = Clock::now();
  for (const char* c : {"rosenbrock", "heat-implicit", "heat-explicit"}) {
    const std::string cmd = std::string("\"") + IAD_BENCH_EXE + "\" check " + c + " > /dev/null";
    const int status = std::system(cmd.c_str());
    res.require(status == 0, std::string("check ") + c + " exit status " + std::to_string(status));
  }
  const double elapsed = seconds_since(t0);
  res.require(elapsed < 60.0, "runtime");
  res.detail << "check rosenbrock / heat-implicit / heat-explicit at default sizes: " << sci(elapsed)
             << " s (limit 60)";
  return res;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<int, std::function<Result()>>> criteria = {
      {1, rosenbrock_agreement}, {2, solver_path_independence}, {3, rosenbrock_ordering},
      {4, unsteady_adjoint},     {5, adjoint_memory},           {6, explicit_per_step},
      {7, explicit_ordering},    {8, external_rule},            {9, fixed_point_and_linear},
      {10, check_command},
  };
  // Optional criterion numbers on the command line select a subset.
  std::vector<int> only;
  for (int i = 1; i < argc; ++i) only.push_back(std::atoi(argv[i]));

  int failures = 0;
  for (const auto& [id, run] : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Result r;
    try {
      r = run();
    } catch (const std::exception& e) {
      r.pass = false;
      r.detail << "exception: " << e.what();
    }
    if (!r.pass) ++failures;
    std::cout << "criterion " << id << ": " << (r.pass ? "PASS" : "FAIL") << "  " << r.detail.str();
    for (const auto& f : r.failed) std::cout << " [failed: " << f << "]";
    std::cout << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
