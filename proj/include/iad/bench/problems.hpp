#pragma once

#include "iad/ode.hpp"

#include <cmath>

namespace iad::bench {

/**
 * Rosenbrock gradient posed as a root-finding problem in y with the
 * coefficients alpha = x. Entry n-1 of x is not referenced; its Jacobian
 * column is zero.
 */
struct RosenbrockResidual {
  template <typename S>
  VectorX<S> operator()(const VectorX<S>& x, const VectorX<S>& y) const {
    const Index n = y.size();
    VectorX<S> r(n);
    if (n < 2) throw DimensionError("rosenbrock needs n >= 2");
    r(0) = S(-4.0) * x(0) * y(0) * (y(1) - y(0) * y(0)) - S(2.0) * (S(1.0) - y(0));
    for (Index i = 1; i + 1 < n; ++i) {
      r(i) = S(-4.0) * x(i) * y(i) * (y(i + 1) - y(i) * y(i)) - S(2.0) * (S(1.0) - y(i)) +
             S(2.0) * x(i - 1) * (y(i) - y(i - 1) * y(i - 1));
    }
    r(n - 1) = S(2.0) * x(n - 2) * (y(n - 1) - y(n - 2) * y(n - 2));
    return r;
  }
};

struct RosenbrockConfig {
  Index n = 2;
  double alpha = 100.0;

  Eigen::VectorXd x() const { return Eigen::VectorXd::Constant(n, alpha); }
};

/**
 * Thin plate with convection and radiation on an n-by-n node grid.
 *
 * Interior nodes are the states, stored row-major with row 0 nearest the
 * top edge. Top, left and right edges are insulated (the edge node copies
 * its interior neighbour); the bottom row is prescribed by n controls, of
 * which the two corner values never enter the stencil.
 *
 * The diffusion term is scaled by alpha / delta.
 */
struct HeatPlateConfig {
  Index n = 5;
  double alpha = 1.16e-4;
  double beta = 5.78e-5;
  double gamma = 1.64e-12;
  double ambient = 300.0;
  double t_final = 5000.0;
  Index steps = 100;
  double bottom_left = 1000.0;
  double bottom_right = 600.0;
  double plate_size = 1.0;

  void validate() const {
    if (n < 3) throw Error("heat plate grid needs n >= 3");
    if (steps < 1) throw Error("heat plate needs at least one time step");
  }

  Index interior() const { return n - 2; }
  Index states() const { return interior() * interior(); }
  Index controls() const { return n; }
  Index inputs() const { return n * steps; }
  double delta() const { return plate_size / static_cast<double>(n - 1); }
  double dt() const { return t_final / static_cast<double>(steps); }

  Eigen::VectorXd times() const { return Eigen::VectorXd::LinSpaced(steps + 1, 0.0, t_final); }

  /// Bottom-row temperatures, linear from left to right.
  Eigen::VectorXd bottom_profile() const {
    return Eigen::VectorXd::LinSpaced(n, bottom_left, bottom_right);
  }

  /// Controls held constant over every step, one column per step.
  Eigen::VectorXd default_inputs() const { return bottom_profile().replicate(steps, 1); }

  Eigen::VectorXd initial_state() const { return Eigen::VectorXd::Constant(states(), ambient); }
};

/// dT/dt for the interior nodes given the bottom-row controls u.
struct HeatRhs {
  Index n = 5;
  double diffusion = 0.0;  // alpha / delta
  double beta = 0.0;
  double gamma = 0.0;
  double ambient = 300.0;

  explicit HeatRhs(const HeatPlateConfig& cfg)
      : n(cfg.n), diffusion(cfg.alpha / cfg.delta()), beta(cfg.beta), gamma(cfg.gamma), ambient(cfg.ambient) {}

  template <typename S>
  VectorX<S> operator()(const VectorX<S>& u, const VectorX<S>& y) const {
    const Index m = n - 2;
    require_size(u.size(), n, "heat controls");
    require_size(y.size(), m * m, "heat state");
    const double ta4 = ambient * ambient * ambient * ambient;
    VectorX<S> out(m * m);
    for (Index r = 0; r < m; ++r) {
      for (Index c = 0; c < m; ++c) {
        const S& t = y(r * m + c);
        const S& up = r > 0 ? y((r - 1) * m + c) : t;
        const S& down = r + 1 < m ? y((r + 1) * m + c) : u(c + 1);
        const S& left = c > 0 ? y(r * m + c - 1) : t;
        const S& right = c + 1 < m ? y(r * m + c + 1) : t;
        const S t2 = t * t;
        out(r * m + c) = diffusion * (up + down + left + right - 4.0 * t) - beta * (t - ambient) -
                         gamma * (t2 * t2 - ta4);
      }
    }
    return out;
  }
};

/// Implicit Euler over the plate with the bottom row as per-step controls.
inline auto heat_implicit_spec(const HeatPlateConfig& cfg) {
  cfg.validate();
  const HeatRhs rhs(cfg);
  return make_implicit_euler(
      cfg.states(), 0, cfg.n, cfg.times(),
      [rhs](const auto&, const auto& u, const auto& y, const auto&) { return rhs(u, y); },
      ConstantInit{cfg.initial_state()});
}

/// RK4 over the plate with zero-order-hold controls.
inline auto heat_explicit_spec(const HeatPlateConfig& cfg) {
  cfg.validate();
  const HeatRhs rhs(cfg);
  return make_rk4(
      cfg.states(), 0, cfg.n, cfg.times(),
      [rhs](const auto&, const auto& u, const auto& y, const auto&) { return rhs(u, y); },
      ConstantInit{cfg.initial_state()});
}

}  // namespace iad::bench
