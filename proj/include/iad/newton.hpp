#pragma once

#include "iad/linalg.hpp"
#include "iad/residual.hpp"

#include <cmath>
#include <string>

namespace iad {

struct SolverConfig {
  /// Convergence when the infinity norm of the residual is at most this.
  double tolerance = 1e-10;
  int max_iterations = 200;
  double backtrack = 0.5;
  /// Smallest accepted line-search step fraction.
  double min_step = 0x1p-30;
  /// Sufficient-decrease constant on the squared residual norm.
  double armijo = 1e-4;

  void validate() const {
    if (!(tolerance > 0.0)) throw Error("solver tolerance must be positive");
    if (max_iterations < 1) throw Error("solver needs at least one iteration");
    if (!(backtrack > 0.0 && backtrack < 1.0)) throw Error("backtracking factor must be in (0, 1)");
  }
};

struct SolveStats {
  int iterations = 0;
  double residual_norm = 0.0;
  int function_evals = 0;
};

template <typename S>
struct SolveResult {
  VectorX<S> y;
  SolveStats stats;
};

/**
 * Damped Newton iteration for r(x, y) = 0 in y.
 *
 * Generic in the scalar type: with dual or taped x the whole iteration,
 * Jacobian and LU included, is differentiated (direct AD). Convergence,
 * pivoting and line-search decisions use primal values only.
 */
template <typename Spec, typename S>
SolveResult<S> newton_solve(const Spec& spec, const VectorX<S>& x, const Eigen::VectorXd& y0,
                            const SolverConfig& cfg = {}) {
  cfg.validate();
  require_size(x.size(), spec.nx, "newton input");
  require_size(y0.size(), spec.ny, "newton initial guess");

  SolveResult<S> out;
  VectorX<S> y = y0.template cast<S>();
  VectorX<S> r = spec(x, y);
  SolveStats& st = out.stats;
  st.function_evals = 1;
  double norm = primal_inf_norm(r);
  double merit = primal_squared_norm(r);

  while (!(norm <= cfg.tolerance)) {
    if (!std::isfinite(norm)) throw NonFiniteError("non-finite residual in Newton iteration");
    if (st.iterations >= cfg.max_iterations) {
      throw ConvergenceError("Newton did not converge in " + std::to_string(cfg.max_iterations) +
                             " iterations (residual " + std::to_string(norm) + ")");
    }
    VectorX<S> dy;
    try {
      DenseLU<S> lu(spec.jacobian_y(x, y));
      dy = lu.solve(VectorX<S>(-r));
    } catch (const SingularMatrixError& e) {
      throw SingularJacobianError(std::string("Newton Jacobian: ") + e.what());
    }

    double t = 1.0;
    for (;;) {
      VectorX<S> trial = y + dy * S(t);
      VectorX<S> rt = spec(x, trial);
      ++st.function_evals;
      const double trial_merit = primal_squared_norm(rt);
      if (trial_merit <= (1.0 - 2.0 * cfg.armijo * t) * merit || primal_inf_norm(rt) <= cfg.tolerance) {
        y = std::move(trial);
        r = std::move(rt);
        merit = trial_merit;
        break;
      }
      t *= cfg.backtrack;
      if (t < cfg.min_step) {
        throw LineSearchStallError("Newton line search stalled (residual " + std::to_string(norm) + ")");
      }
    }
    ++st.iterations;
    norm = primal_inf_norm(r);
  }
  st.residual_norm = norm;
  out.y = std::move(y);
  return out;
}

}  // namespace iad
