#pragma once

#include "iad/forward.hpp"
#include "iad/implicit.hpp"
#include "iad/linalg.hpp"
#include "iad/newton.hpp"
#include "iad/residual.hpp"
#include "iad/reverse.hpp"

#include <iosfwd>
#include <optional>
#include <string>
#include <type_traits>
#include <vector>

namespace iad {

/// States y_0 ... y_n as columns, with the matching time grid.
struct Trajectory {
  Eigen::MatrixXd states;
  Eigen::VectorXd times;
  /// Newton iterations summed over all steps (implicit integrators).
  Index solver_iterations = 0;

  Index num_steps() const { return states.cols() - 1; }
  Eigen::VectorXd final_state() const { return states.col(states.cols() - 1); }

  /// One row per time: t,y0,y1,...
  void write_csv(std::ostream& out) const;
  void write_csv(const std::string& path) const;
};

/**
 * Time-stepped problem in residual form.
 *
 * The overall input vector is x = [xd; xc_1; ...; xc_n]: nd design values
 * used by every step and the initial condition, followed by nc controls per
 * step. Step i >= 1 has residual
 *
 *   residual(xd, xc_i, y_i, yprev, tw) = 0,
 *
 * where yprev stacks y_{i-1}, ..., y_{i-s} (indices below zero clamp to
 * y_0) and tw = [t_i, t_{i-1}, ..., t_{i-s}] clamped the same way. Step 0
 * is y_0 = init(xd). All arguments share one scalar type, so the residual
 * must be a generic callable.
 */
template <typename Residual, typename Init>
struct StepResidualSpec {
  Index ny = 0;
  Index nd = 0;
  Index nc = 0;
  int stencil = 1;
  Eigen::VectorXd times;
  Residual residual;
  Init init;

  Index num_steps() const { return times.size() - 1; }
  Index nx() const { return nd + nc * num_steps(); }
  Index local_inputs() const { return nd + nc + stencil * ny; }
  Index control_offset(Index step) const { return nd + nc * (step - 1); }

  void validate() const {
    if (stencil != 1 && stencil != 2) throw Error("stencil depth must be 1 or 2");
    if (times.size() < 2) throw Error("time grid needs at least two points");
    if (ny < 1) throw Error("step residual needs at least one state");
  }
};

/// Explicit time stepping y_i = step(xd, xc_i, yprev, tw); same layout as above.
template <typename Step, typename Init>
struct ExplicitStepSpec {
  Index ny = 0;
  Index nd = 0;
  Index nc = 0;
  int stencil = 1;
  Eigen::VectorXd times;
  Step step;
  Init init;

  Index num_steps() const { return times.size() - 1; }
  Index nx() const { return nd + nc * num_steps(); }
  Index local_inputs() const { return nd + nc + stencil * ny; }
  Index control_offset(Index step) const { return nd + nc * (step - 1); }

  void validate() const {
    if (stencil != 1 && stencil != 2) throw Error("stencil depth must be 1 or 2");
    if (times.size() < 2) throw Error("time grid needs at least two points");
    if (ny < 1) throw Error("step map needs at least one state");
  }
};

/// Initial condition that does not depend on the inputs.
struct ConstantInit {
  Eigen::VectorXd y0;

  template <typename S>
  VectorX<S> operator()(const VectorX<S>& /*xd*/) const {
    return y0.template cast<S>();
  }
};

namespace detail {

template <typename V>
using scalar_of = typename std::remove_cvref_t<V>::Scalar;

inline Index clamp_step(Index i) { return i < 0 ? 0 : i; }

inline Eigen::VectorXd time_window(const Eigen::VectorXd& times, Index i, int s) {
  Eigen::VectorXd tw(s + 1);
  for (int j = 0; j <= s; ++j) tw(j) = times(clamp_step(i - j));
  return tw;
}

/// [xd; xc_i; y_{i-1}; ...; y_{i-s}] from the stored trajectory.
template <typename Spec>
Eigen::VectorXd local_point(const Spec& spec, const Eigen::VectorXd& x, const Eigen::MatrixXd& states, Index i) {
  Eigen::VectorXd p(spec.local_inputs());
  p.head(spec.nd) = x.head(spec.nd);
  p.segment(spec.nd, spec.nc) = x.segment(spec.control_offset(i), spec.nc);
  for (int j = 1; j <= spec.stencil; ++j) {
    p.segment(spec.nd + spec.nc + (j - 1) * spec.ny, spec.ny) = states.col(clamp_step(i - j));
  }
  return p;
}

/// Step i as a residual r(p, y_i) over the local inputs p.
template <typename Spec>
auto step_residual(const Spec& spec, Index i) {
  const Eigen::VectorXd tw = time_window(spec.times, i, spec.stencil);
  const Spec* sp = &spec;
  return make_residual_spec(spec.local_inputs(), spec.ny, [sp, tw](const auto& p, const auto& y) {
    using S = scalar_of<decltype(p)>;
    const Index nd = sp->nd;
    const Index nc = sp->nc;
    return VectorX<S>(sp->residual(VectorX<S>(p.head(nd)), VectorX<S>(p.segment(nd, nc)), y,
                                   VectorX<S>(p.tail(p.size() - nd - nc)), VectorX<S>(tw.template cast<S>())));
  });
}

template <typename S>
void check_finite(const VectorX<S>& v, Index step) {
  for (Index k = 0; k < v.size(); ++k) {
    if (!std::isfinite(primal(v(k)))) {
      NonFiniteError e("non-finite state");
      e.set_step(step);
      throw e;
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Builders

/**
 * Implicit Euler: r_i = y_i - y_{i-1} - (t_i - t_{i-1}) rhs(xd, xc_i, y_i, t_i).
 * `rhs` is generic in the scalar type: rhs(xd, xc, y, t) -> dy/dt.
 */
template <typename Rhs, typename Init>
auto make_implicit_euler(Index ny, Index nd, Index nc, Eigen::VectorXd times, Rhs rhs, Init init) {
  auto residual = [rhs](const auto& xd, const auto& xc, const auto& y, const auto& yprev, const auto& tw) {
    using S = detail::scalar_of<decltype(y)>;
    const S dt = tw(0) - tw(1);
    const VectorX<S> f = rhs(xd, xc, y, tw(0));
    return VectorX<S>(y - yprev.head(y.size()) - f * dt);
  };
  StepResidualSpec<decltype(residual), Init> spec{ny, nd, nc, 1, std::move(times), std::move(residual),
                                                  std::move(init)};
  spec.validate();
  return spec;
}

/// Classic fourth-order Runge-Kutta with the step's controls held over the step.
template <typename Rhs, typename Init>
auto make_rk4(Index ny, Index nd, Index nc, Eigen::VectorXd times, Rhs rhs, Init init) {
  auto step = [rhs](const auto& xd, const auto& xc, const auto& yprev, const auto& tw) {
    using S = detail::scalar_of<decltype(yprev)>;
    // The time grid is data: stage weights stay plain doubles.
    const double h = primal(tw(0)) - primal(tw(1));
    const double t = primal(tw(1));
    const double half = 0.5 * h;
    const Index n = yprev.size();
    auto stage = [&](const VectorX<S>& k, double w) {
      VectorX<S> out(n);
      for (Index i = 0; i < n; ++i) out(i) = yprev(i) + k(i) * w;
      return out;
    };
    const VectorX<S> y = yprev;
    const VectorX<S> k1 = rhs(xd, xc, y, S(t));
    const VectorX<S> k2 = rhs(xd, xc, stage(k1, half), S(t + half));
    const VectorX<S> k3 = rhs(xd, xc, stage(k2, half), S(t + half));
    const VectorX<S> k4 = rhs(xd, xc, stage(k3, h), S(t + h));
    const double w = h / 6.0;
    VectorX<S> out(n);
    for (Index i = 0; i < n; ++i) out(i) = y(i) + (k1(i) + (k2(i) + k3(i)) * 2.0 + k4(i)) * w;
    return out;
  };
  ExplicitStepSpec<decltype(step), Init> spec{ny, nd, nc, 1, std::move(times), std::move(step), std::move(init)};
  spec.validate();
  return spec;
}

/// The explicit problem in residual form r_i = step(...) - y_i.
template <typename Step, typename Init>
auto as_residual(const ExplicitStepSpec<Step, Init>& spec) {
  auto residual = [step = spec.step](const auto& xd, const auto& xc, const auto& y, const auto& yprev,
                                     const auto& tw) {
    using S = detail::scalar_of<decltype(y)>;
    return VectorX<S>(step(xd, xc, yprev, tw) - y);
  };
  return StepResidualSpec<decltype(residual), Init>{spec.ny,    spec.nd,           spec.nc,  spec.stencil,
                                                    spec.times, std::move(residual), spec.init};
}

// ---------------------------------------------------------------------------
// Primal integration

/// Solve every step with Newton from the previous state. Errors carry the step index.
template <typename R, typename I>
Trajectory integrate_implicit(const StepResidualSpec<R, I>& spec, const Eigen::VectorXd& x,
                              const SolverConfig& cfg = {}) {
  spec.validate();
  require_size(x.size(), spec.nx(), "integration inputs");
  const Index n = spec.num_steps();
  Trajectory traj;
  traj.times = spec.times;
  traj.states.resize(spec.ny, n + 1);
  const VectorX<double> y0 = spec.init(VectorX<double>(x.head(spec.nd)));
  require_size(y0.size(), spec.ny, "initial state");
  traj.states.col(0) = y0;
  for (Index i = 1; i <= n; ++i) {
    try {
      const auto local = detail::step_residual(spec, i);
      const VectorX<double> p = detail::local_point(spec, x, traj.states, i);
      const auto res = newton_solve(local, p, traj.states.col(i - 1), cfg);
      traj.states.col(i) = res.y;
      traj.solver_iterations += res.stats.iterations;
    } catch (Error& e) {
      e.set_step(i);
      throw;
    }
  }
  return traj;
}

/// How a generic implicit integration differentiates through each step solve.
enum class StepSolve {
  Unrolled,  // AD through every Newton iteration
  Implicit,  // each step solve is one implicit node
};

/**
 * Final state of an implicit integration in any scalar type: with duals or
 * taped inputs this is direct AD of the whole time loop.
 */
template <typename R, typename I, typename S>
VectorX<S> integrate_implicit_final(const StepResidualSpec<R, I>& spec, const VectorX<S>& x,
                                    const SolverConfig& cfg = {}, StepSolve mode = StepSolve::Unrolled,
                                    Index* solver_iterations = nullptr) {
  spec.validate();
  require_size(x.size(), spec.nx(), "integration inputs");
  const Index n = spec.num_steps();
  const Index ny = spec.ny;
  const int s = spec.stencil;
  std::vector<VectorX<S>> recent(static_cast<std::size_t>(s + 1));  // recent[j] = y_{i-1-j}
  const VectorX<S> xd = x.head(spec.nd);
  recent[0] = spec.init(xd);
  require_size(recent[0].size(), ny, "initial state");
  for (int j = 1; j <= s; ++j) recent[static_cast<std::size_t>(j)] = recent[0];
  VectorX<S> p(spec.local_inputs());
  p.head(spec.nd) = xd;
  for (Index i = 1; i <= n; ++i) {
    try {
      p.segment(spec.nd, spec.nc) = x.segment(spec.control_offset(i), spec.nc);
      for (int j = 0; j < s; ++j) p.segment(spec.nd + spec.nc + j * ny, ny) = recent[static_cast<std::size_t>(j)];
      const auto local = detail::step_residual(spec, i);
      const Eigen::VectorXd guess = primal_values(recent[0]);
      VectorX<S> y;
      if constexpr (std::is_same_v<S, Var>) {
        if (mode == StepSolve::Implicit) {
          y = implicit(local, newton_solver(local, guess, cfg), p);
        } else {
          auto res = newton_solve(local, p, guess, cfg);
          if (solver_iterations) *solver_iterations += res.stats.iterations;
          y = std::move(res.y);
        }
      } else if constexpr (std::is_same_v<S, Dual<double>>) {
        if (mode == StepSolve::Implicit) {
          y = implicit_forward(local, newton_solver(local, guess, cfg), p);
        } else {
          auto res = newton_solve(local, p, guess, cfg);
          if (solver_iterations) *solver_iterations += res.stats.iterations;
          y = std::move(res.y);
        }
      } else {
        auto res = newton_solve(local, p, guess, cfg);
        if (solver_iterations) *solver_iterations += res.stats.iterations;
        y = std::move(res.y);
      }
      for (int j = s; j > 0; --j) recent[static_cast<std::size_t>(j)] = std::move(recent[static_cast<std::size_t>(j - 1)]);
      recent[0] = std::move(y);
    } catch (Error& e) {
      e.set_step(i);
      throw;
    }
  }
  return recent[0];
}

template <typename St, typename I>
Trajectory integrate_explicit(const ExplicitStepSpec<St, I>& spec, const Eigen::VectorXd& x) {
  spec.validate();
  require_size(x.size(), spec.nx(), "integration inputs");
  const Index n = spec.num_steps();
  Trajectory traj;
  traj.times = spec.times;
  traj.states.resize(spec.ny, n + 1);
  const VectorX<double> xd = x.head(spec.nd);
  const VectorX<double> y0 = spec.init(xd);
  require_size(y0.size(), spec.ny, "initial state");
  traj.states.col(0) = y0;
  for (Index i = 1; i <= n; ++i) {
    const Eigen::VectorXd p = detail::local_point(spec, x, traj.states, i);
    const VectorX<double> tw = detail::time_window(spec.times, i, spec.stencil);
    const VectorX<double> y = spec.step(xd, VectorX<double>(p.segment(spec.nd, spec.nc)),
                                        VectorX<double>(p.tail(spec.stencil * spec.ny)), tw);
    require_size(y.size(), spec.ny, "step map output");
    detail::check_finite(y, i);
    traj.states.col(i) = y;
  }
  return traj;
}

/// Final state of an explicit integration in any scalar type (direct AD).
template <typename St, typename I, typename S>
VectorX<S> integrate_explicit_final(const ExplicitStepSpec<St, I>& spec, const VectorX<S>& x) {
  spec.validate();
  require_size(x.size(), spec.nx(), "integration inputs");
  const Index n = spec.num_steps();
  const Index ny = spec.ny;
  const int s = spec.stencil;
  const VectorX<S> xd = x.head(spec.nd);
  VectorX<S> yprev(s * ny);
  const VectorX<S> y0 = spec.init(xd);
  require_size(y0.size(), ny, "initial state");
  for (int j = 0; j < s; ++j) yprev.segment(j * ny, ny) = y0;
  VectorX<S> y = y0;
  for (Index i = 1; i <= n; ++i) {
    const VectorX<S> tw = detail::time_window(spec.times, i, s).template cast<S>();
    y = spec.step(xd, VectorX<S>(x.segment(spec.control_offset(i), spec.nc)), yprev, tw);
    require_size(y.size(), ny, "step map output");
    detail::check_finite(y, i);
    for (int j = s - 1; j > 0; --j) yprev.segment(j * ny, ny) = yprev.segment((j - 1) * ny, ny);
    yprev.head(ny) = y;
  }
  return y;
}

// ---------------------------------------------------------------------------
// Sensitivity sweeps

/**
 * Forward (tangent) sweep: ydot_0 from the initial condition, then for each
 * step solve (dr_i/dy_i) ydot_i = -(dr_i/dp) pdot with p the local inputs
 * (design, controls, prior states). The right-hand side is one dual-seeded
 * residual evaluation; dr_i/dy_i is recomputed at the stored state.
 *
 * `xdot` is nx-by-k. Returns ydot for every step, or only the final one
 * when `keep_all` is false.
 */
template <typename R, typename I>
std::vector<Eigen::MatrixXd> ode_forward_sweep(const StepResidualSpec<R, I>& spec, const Trajectory& traj,
                                               const Eigen::VectorXd& x, const Eigen::MatrixXd& xdot,
                                               bool keep_all = true) {
  spec.validate();
  require_size(x.size(), spec.nx(), "sweep inputs");
  require_size(xdot.rows(), spec.nx(), "sweep seed rows");
  require_size(traj.states.cols(), spec.num_steps() + 1, "trajectory length");
  const Index n = spec.num_steps();
  const Index ny = spec.ny;
  const Index k = xdot.cols();
  const int s = spec.stencil;

  std::vector<Eigen::MatrixXd> recent(static_cast<std::size_t>(s + 1));  // recent[j] = ydot_{i-1-j}
  if (spec.nd > 0) {
    const VectorX<Dual<double>> y0 = spec.init(lift(VectorX<double>(x.head(spec.nd)), xdot.topRows(spec.nd)));
    recent[0] = dual_partials(y0, k);
  } else {
    recent[0] = Eigen::MatrixXd::Zero(ny, k);
  }
  for (int j = 1; j <= s; ++j) recent[static_cast<std::size_t>(j)] = recent[0];
  std::vector<Eigen::MatrixXd> out;
  if (keep_all) out.push_back(recent[0]);

  Eigen::MatrixXd pdot(spec.local_inputs(), k);
  pdot.topRows(spec.nd) = xdot.topRows(spec.nd);
  for (Index i = 1; i <= n; ++i) {
    try {
      const auto local = detail::step_residual(spec, i);
      const Eigen::VectorXd p = detail::local_point(spec, x, traj.states, i);
      const Eigen::VectorXd yi = traj.states.col(i);
      pdot.middleRows(spec.nd, spec.nc) = xdot.middleRows(spec.control_offset(i), spec.nc);
      for (int j = 0; j < s; ++j) pdot.middleRows(spec.nd + spec.nc + j * ny, ny) = recent[static_cast<std::size_t>(j)];
      const VectorX<Dual<double>> r = local(lift(VectorX<double>(p), pdot), constant_duals(VectorX<double>(yi)));
      const Eigen::MatrixXd b = -dual_partials(r, k);
      DenseLU<double> lu;
      try {
        lu = DenseLU<double>(local.jacobian_y(VectorX<double>(p), VectorX<double>(yi)));
      } catch (const SingularMatrixError& e) {
        throw SingularJacobianError(std::string("dr/dy: ") + e.what());
      }
      for (int j = s; j > 0; --j) recent[static_cast<std::size_t>(j)] = std::move(recent[static_cast<std::size_t>(j - 1)]);
      recent[0] = lu.solve(b);
      if (keep_all) out.push_back(recent[0]);
    } catch (Error& e) {
      e.set_step(i);
      throw;
    }
  }
  if (!keep_all) out.push_back(recent[0]);
  return out;
}

/**
 * Reverse-sweep storage: one lambda vector plus s pending-adjoint vectors,
 * reused across every step of every sweep of the same shape.
 */
class AdjointWorkspace {
 public:
  void prepare(Index ny, int stencil, Index nx) {
    const auto count = static_cast<std::size_t>(stencil + 1);
    if (buffers_.size() != count || (count > 0 && buffers_[0].size() != ny)) {
      buffers_.assign(count, Eigen::VectorXd::Zero(ny));
      allocations_ += static_cast<Index>(count);
    } else {
      for (auto& b : buffers_) b.setZero();
    }
    if (xbar_.size() != nx) xbar_.resize(nx);
    xbar_.setZero();
    head_ = 0;
  }

  /// Number of state-sized adjoint vectors held (s + 1).
  Index lambda_buffer_count() const { return static_cast<Index>(buffers_.size()); }
  /// Adjoint vectors allocated over the workspace's lifetime.
  Index buffer_allocations() const { return allocations_; }

  Eigen::VectorXd& lambda() { return buffers_[0]; }
  /// Pending adjoint for y_{i-j} while processing step i.
  Eigen::VectorXd& pending(int j) {
    const auto s = static_cast<int>(buffers_.size()) - 1;
    return buffers_[static_cast<std::size_t>(1 + (head_ + j) % s)];
  }
  /// lambda = seed + pending adjoint of y_i; that slot is cleared and is
  /// reused for y_{i-s}.
  Eigen::VectorXd& take(const Eigen::Ref<const Eigen::VectorXd>& seed) {
    Eigen::VectorXd& slot = pending(0);
    buffers_[0] = seed + slot;
    slot.setZero();
    return buffers_[0];
  }
  /// Move on to step i - 1.
  void advance() { head_ = (head_ + 1) % (static_cast<int>(buffers_.size()) - 1); }
  Eigen::VectorXd& xbar() { return xbar_; }

 private:
  std::vector<Eigen::VectorXd> buffers_;
  Eigen::VectorXd xbar_;
  Index allocations_ = 0;
  int head_ = 0;
};

struct SweepOptions {
  /// Record the step tape once and replay it for later steps. Only valid
  /// for step functions without value-dependent branches.
  bool reuse_tape = true;
  /// Explicit sweeps: compare each replayed output with the stored state
  /// and re-record the step on mismatch.
  bool verify_replay = true;
};

struct SweepStats {
  /// Node count of the largest step tape held at once.
  Index peak_tape_nodes = 0;
  Index tape_recordings = 0;
  /// Steps whose replay disagreed with the stored state and were re-recorded.
  Index rerecorded_steps = 0;
};

namespace detail {

/// Tape of r(xd, xc, y, yprev, tw) over inputs [xd; xc; yprev; y; tw].
template <typename R, typename I>
Tape record_step_residual(const StepResidualSpec<R, I>& spec, const Eigen::VectorXd& inputs) {
  const Index nd = spec.nd;
  const Index nc = spec.nc;
  const Index np = spec.stencil * spec.ny;
  const Index ny = spec.ny;
  return record(
             [&](const VectorX<Var>& v) {
               return VectorX<Var>(spec.residual(VectorX<Var>(v.head(nd)), VectorX<Var>(v.segment(nd, nc)),
                                                 VectorX<Var>(v.segment(nd + nc + np, ny)),
                                                 VectorX<Var>(v.segment(nd + nc, np)), VectorX<Var>(v.tail(spec.stencil + 1))));
             },
             inputs)
      .tape;
}

/// Tape of step(xd, xc, yprev, tw) over inputs [xd; xc; yprev; tw].
template <typename St, typename I>
Tape record_step_map(const ExplicitStepSpec<St, I>& spec, const Eigen::VectorXd& inputs) {
  const Index nd = spec.nd;
  const Index nc = spec.nc;
  const Index np = spec.stencil * spec.ny;
  return record(
             [&](const VectorX<Var>& v) {
               return VectorX<Var>(spec.step(VectorX<Var>(v.head(nd)), VectorX<Var>(v.segment(nd, nc)),
                                             VectorX<Var>(v.segment(nd + nc, np)), VectorX<Var>(v.tail(spec.stencil + 1))));
             },
             inputs)
      .tape;
}

/// xbar_d += (d init / d xd)^T w.
template <typename Spec>
void add_init_pullback(const Spec& spec, const Eigen::VectorXd& x, const Eigen::VectorXd& w, Eigen::VectorXd& xbar) {
  if (spec.nd == 0 || w.isZero(0.0)) return;
  Recording rec = record([&](const VectorX<Var>& xd) { return VectorX<Var>(spec.init(xd)); },
                         Eigen::VectorXd(x.head(spec.nd)));
  xbar.head(spec.nd) += rec.tape.vjp(w);
}

}  // namespace detail

/**
 * Reverse (adjoint) sweep, final step to first:
 *
 *   (dr_i/dy_i)^T lambda_i = ybar_i - sum_j (dr_{i+j}/dy_i)^T lambda_{i+j}
 *   xbar -= lambda_i^T dr_i/dx
 *
 * Both products at step i come from one reverse pass over the step tape
 * seeded with lambda_i. Only s + 1 state-sized vectors are kept.
 *
 * `ybar` is ny-by-(n+1), one seed column per stored state.
 */
template <typename R, typename I>
Eigen::VectorXd ode_reverse_sweep(const StepResidualSpec<R, I>& spec, const Trajectory& traj, const Eigen::VectorXd& x,
                                  const Eigen::MatrixXd& ybar, AdjointWorkspace* workspace = nullptr,
                                  const SweepOptions& opts = {}, SweepStats* stats = nullptr) {
  spec.validate();
  require_size(x.size(), spec.nx(), "sweep inputs");
  const Index n = spec.num_steps();
  const Index ny = spec.ny;
  const int s = spec.stencil;
  require_size(traj.states.cols(), n + 1, "trajectory length");
  require_size(ybar.rows(), ny, "adjoint seed rows");
  require_size(ybar.cols(), n + 1, "adjoint seed columns");

  AdjointWorkspace local_ws;
  AdjointWorkspace& ws = workspace ? *workspace : local_ws;
  ws.prepare(ny, s, spec.nx());
  Eigen::VectorXd& xbar = ws.xbar();

  const Index nd = spec.nd;
  const Index nc = spec.nc;
  const Index np = s * ny;
  Eigen::VectorXd tape_in(nd + nc + np + ny + s + 1);
  std::optional<Tape> tape;

  for (Index i = n; i >= 1; --i) {
    try {
      Eigen::VectorXd& lambda = ws.take(ybar.col(i));
      if (lambda.isZero(0.0)) {
        ws.advance();
        continue;
      }
      const Eigen::VectorXd p = detail::local_point(spec, x, traj.states, i);
      const Eigen::VectorXd yi = traj.states.col(i);
      const auto local = detail::step_residual(spec, i);
      try {
        const DenseLU<double> lu(local.jacobian_y(VectorX<double>(p), VectorX<double>(yi)));
        lambda = lu.solve_transposed(VectorX<double>(lambda));
      } catch (const SingularMatrixError& e) {
        throw SingularJacobianError(std::string("dr/dy: ") + e.what());
      }

      tape_in.head(nd + nc + np) = p;
      tape_in.segment(nd + nc + np, ny) = yi;
      tape_in.tail(s + 1) = detail::time_window(spec.times, i, s);
      if (!tape || !opts.reuse_tape) {
        tape = detail::record_step_residual(spec, tape_in);
        if (stats) {
          ++stats->tape_recordings;
          stats->peak_tape_nodes = std::max(stats->peak_tape_nodes, tape->size());
        }
      } else {
        tape->replay(tape_in);
      }
      const Eigen::VectorXd g = tape->vjp(lambda);

      xbar.head(nd) -= g.head(nd);
      xbar.segment(spec.control_offset(i), nc) -= g.segment(nd, nc);
      for (int j = 1; j <= s; ++j) {
        // Priors before t_0 are y_0 itself.
        const int slot = i - j >= 0 ? j : static_cast<int>(i);
        ws.pending(slot) -= g.segment(nd + nc + (j - 1) * ny, ny);
      }
      ws.advance();
    } catch (Error& e) {
      e.set_step(i);
      throw;
    }
  }
  // r_0 = y_0 - init(xd): dr_0/dy_0 = I.
  const Eigen::VectorXd& lambda0 = ws.take(ybar.col(0));
  detail::add_init_pullback(spec, x, lambda0, xbar);
  return xbar;
}

/// Seed only the final state.
template <typename R, typename I, typename Derived>
  requires(Derived::ColsAtCompileTime == 1)
Eigen::VectorXd ode_reverse_sweep(const StepResidualSpec<R, I>& spec, const Trajectory& traj, const Eigen::VectorXd& x,
                                  const Eigen::MatrixBase<Derived>& ybar_final, AdjointWorkspace* workspace = nullptr,
                                  const SweepOptions& opts = {}, SweepStats* stats = nullptr) {
  require_size(ybar_final.size(), spec.ny, "final-state seed");
  Eigen::MatrixXd seeds = Eigen::MatrixXd::Zero(spec.ny, spec.num_steps() + 1);
  seeds.col(spec.num_steps()) = ybar_final;
  return ode_reverse_sweep(spec, traj, x, seeds, workspace, opts, stats);
}

/**
 * Reverse sweep for explicit steps y_i = f_i(xd, xc_i, yprev):
 *
 *   w_n = ybar_n,  w_i = ybar_i + sum_j (df_{i+j}/dy_i)^T w_{i+j},
 *   xbar += w_i^T df_i/dx.
 *
 * One step tape is recorded and replayed at every step, so peak tape size
 * is that of a single step. With `verify_replay`, a replay whose output
 * differs from the stored state triggers a fresh recording of that step.
 */
template <typename St, typename I>
Eigen::VectorXd explicit_reverse_per_step(const ExplicitStepSpec<St, I>& spec, const Trajectory& traj,
                                          const Eigen::VectorXd& x, const Eigen::MatrixXd& ybar,
                                          const SweepOptions& opts = {}, SweepStats* stats = nullptr,
                                          AdjointWorkspace* workspace = nullptr) {
  spec.validate();
  require_size(x.size(), spec.nx(), "sweep inputs");
  const Index n = spec.num_steps();
  const Index ny = spec.ny;
  const int s = spec.stencil;
  require_size(traj.states.cols(), n + 1, "trajectory length");
  require_size(ybar.rows(), ny, "adjoint seed rows");
  require_size(ybar.cols(), n + 1, "adjoint seed columns");

  AdjointWorkspace local_ws;
  AdjointWorkspace& ws = workspace ? *workspace : local_ws;
  ws.prepare(ny, s, spec.nx());
  Eigen::VectorXd& xbar = ws.xbar();

  const Index nd = spec.nd;
  const Index nc = spec.nc;
  const Index np = s * ny;
  Eigen::VectorXd tape_in(nd + nc + np + s + 1);
  std::optional<Tape> tape;
  SweepStats local_stats;
  SweepStats& st = stats ? *stats : local_stats;

  auto record_here = [&]() {
    tape = detail::record_step_map(spec, tape_in);
    ++st.tape_recordings;
    st.peak_tape_nodes = std::max(st.peak_tape_nodes, tape->size());
  };

  for (Index i = n; i >= 1; --i) {
    try {
      Eigen::VectorXd& w = ws.take(ybar.col(i));
      if (w.isZero(0.0)) {
        ws.advance();
        continue;
      }
      tape_in.head(nd + nc + np) = detail::local_point(spec, x, traj.states, i);
      tape_in.tail(s + 1) = detail::time_window(spec.times, i, s);
      if (!tape || !opts.reuse_tape) {
        record_here();
      } else {
        tape->replay(tape_in);
        if (opts.verify_replay) {
          const Eigen::VectorXd yi = traj.states.col(i);
          const double err = (tape->output_values() - yi).lpNorm<Eigen::Infinity>();
          if (!(err <= 1e-10 * std::max(1.0, yi.lpNorm<Eigen::Infinity>()))) {
            record_here();
            ++st.rerecorded_steps;
          }
        }
      }
      const Eigen::VectorXd g = tape->vjp(w);
      xbar.head(nd) += g.head(nd);
      xbar.segment(spec.control_offset(i), nc) += g.segment(nd, nc);
      for (int j = 1; j <= s; ++j) {
        const int slot = i - j >= 0 ? j : static_cast<int>(i);
        ws.pending(slot) += g.segment(nd + nc + (j - 1) * ny, ny);
      }
      ws.advance();
    } catch (Error& e) {
      e.set_step(i);
      throw;
    }
  }
  const Eigen::VectorXd& w0 = ws.take(ybar.col(0));
  detail::add_init_pullback(spec, x, w0, xbar);
  return xbar;
}

template <typename St, typename I, typename Derived>
  requires(Derived::ColsAtCompileTime == 1)
Eigen::VectorXd explicit_reverse_per_step(const ExplicitStepSpec<St, I>& spec, const Trajectory& traj,
                                          const Eigen::VectorXd& x, const Eigen::MatrixBase<Derived>& ybar_final,
                                          const SweepOptions& opts = {}, SweepStats* stats = nullptr,
                                          AdjointWorkspace* workspace = nullptr) {
  require_size(ybar_final.size(), spec.ny, "final-state seed");
  Eigen::MatrixXd seeds = Eigen::MatrixXd::Zero(spec.ny, spec.num_steps() + 1);
  seeds.col(spec.num_steps()) = ybar_final;
  return explicit_reverse_per_step(spec, traj, x, seeds, opts, stats, workspace);
}

}  // namespace iad
