#pragma once

#include "iad/forward.hpp"

#include <type_traits>
#include <utility>

namespace iad {

/// Marker for a residual whose state Jacobian is obtained by forward AD.
struct NoJacobian {};

/**
 * Residual r(x, y) with nx inputs and ny states, r of length ny.
 *
 * `residual` is a generic callable taking (VectorX<S> x, VectorX<S> y) for
 * every scalar S the computation needs (double, duals, taped scalars). The
 * optional `drdy` has the same shape and returns the ny-by-ny matrix dr/dy;
 * without it dr/dy comes from forward-mode AD.
 */
template <typename Residual, typename Jacobian = NoJacobian>
struct ResidualSpec {
  Index nx = 0;
  Index ny = 0;
  Residual residual;
  Jacobian drdy{};

  static constexpr bool has_jacobian = !std::is_same_v<Jacobian, NoJacobian>;

  template <typename S>
  VectorX<S> operator()(const VectorX<S>& x, const VectorX<S>& y) const {
    VectorX<S> r = residual(x, y);
    require_size(r.size(), ny, "residual output");
    return r;
  }

  /// dr/dy at (x, y) in the scalar type of the arguments.
  template <typename S>
  MatrixX<S> jacobian_y(const VectorX<S>& x, const VectorX<S>& y) const {
    if constexpr (has_jacobian) {
      MatrixX<S> j = drdy(x, y);
      require_size(j.rows(), ny, "drdy rows");
      require_size(j.cols(), ny, "drdy cols");
      return j;
    } else {
      const VectorX<Dual<S>> xc = constant_duals(x);
      return jacobian<S>([&](const auto& yd) { return (*this)(xc, yd); }, y, JacobianOptions{0});
    }
  }

  // Interface shared with FixedPointSpec for the implicit rules.
  Eigen::MatrixXd state_jacobian(const Eigen::VectorXd& x, const Eigen::VectorXd& y) const {
    return jacobian_y(x, y);
  }

  /// A function of x whose x-Jacobian at fixed y equals dr/dx.
  template <typename S>
  VectorX<S> input_part(const VectorX<S>& x, const VectorX<S>& y) const {
    return (*this)(x, y);
  }
};

template <typename Residual>
ResidualSpec<Residual> make_residual_spec(Index nx, Index ny, Residual r) {
  return {nx, ny, std::move(r), {}};
}

template <typename Residual, typename Jacobian>
ResidualSpec<Residual, Jacobian> make_residual_spec(Index nx, Index ny, Residual r, Jacobian drdy) {
  return {nx, ny, std::move(r), std::move(drdy)};
}

}  // namespace iad
