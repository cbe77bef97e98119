#pragma once

#include "iad/dual.hpp"

#include <algorithm>

namespace iad {

/// Rows are local inputs, columns are seed directions.
using SeedMatrix = Eigen::MatrixXd;

struct JacobianOptions {
  /// Widest seed block pushed through `f` at once; wider Jacobians are
  /// assembled from several passes. Zero means no limit.
  Index max_seed_width = 12;
};

/// Duals with value x[i] and partials equal to row i of `seeds`.
template <typename S, typename Derived>
VectorX<Dual<S>> lift(const VectorX<S>& x, const Eigen::MatrixBase<Derived>& seeds) {
  require_size(seeds.rows(), x.size(), "seed rows");
  VectorX<Dual<S>> out(x.size());
  for (Index i = 0; i < x.size(); ++i) {
    out(i).value = x(i);
    out(i).partials = seeds.row(i).transpose().template cast<S>();
  }
  return out;
}

/// Promote values to duals with implicit zero partials.
template <typename S>
VectorX<Dual<S>> constant_duals(const VectorX<S>& x) {
  VectorX<Dual<S>> out(x.size());
  for (Index i = 0; i < x.size(); ++i) out(i).value = x(i);
  return out;
}

template <typename S>
VectorX<S> dual_values(const VectorX<Dual<S>>& y) {
  VectorX<S> out(y.size());
  for (Index i = 0; i < y.size(); ++i) out(i) = y(i).value;
  return out;
}

/// Seed width of a dual vector: the common width of its non-empty partials.
template <typename S>
Index seed_width(const VectorX<Dual<S>>& y) {
  Index k = 0;
  for (Index i = 0; i < y.size(); ++i) {
    const Index w = y(i).width();
    if (w == 0) continue;
    if (k != 0 && w != k) detail::check_width(k, w);
    k = w;
  }
  return k;
}

/// Partials as a rows-by-width matrix; implicit partials become zero rows.
template <typename S>
MatrixX<S> dual_partials(const VectorX<Dual<S>>& y, Index width) {
  MatrixX<S> out = MatrixX<S>::Constant(y.size(), width, S(0.0));
  for (Index i = 0; i < y.size(); ++i) {
    if (y(i).width() == 0) continue;
    detail::check_width(y(i).width(), width);
    out.row(i) = y(i).partials.transpose();
  }
  return out;
}

/// Duals from values and a partials matrix (one row per entry).
template <typename S>
VectorX<Dual<S>> make_duals(const VectorX<S>& values, const MatrixX<S>& partials) {
  require_size(partials.rows(), values.size(), "partials rows");
  VectorX<Dual<S>> out(values.size());
  for (Index i = 0; i < values.size(); ++i) {
    out(i).value = values(i);
    out(i).partials = partials.row(i).transpose();
  }
  return out;
}

/// (df/dx) v by one forward pass with seed width 1.
template <typename F>
Eigen::VectorXd jvp(F&& f, const Eigen::VectorXd& x, const Eigen::VectorXd& v) {
  require_size(v.size(), x.size(), "jvp direction");
  const VectorX<Dual<double>> y = f(lift(x, SeedMatrix(v)));
  return dual_partials(y, 1).col(0);
}

/**
 * Dense Jacobian of `f` at `x` from coordinate seeds. `f` must accept
 * VectorX<Dual<S>> and return VectorX<Dual<S>>, which a generic lambda does.
 */
template <typename S, typename F>
MatrixX<S> jacobian(F&& f, const VectorX<S>& x, const JacobianOptions& opts = {}) {
  const Index n = x.size();
  const Index chunk = opts.max_seed_width > 0 ? std::min<Index>(opts.max_seed_width, std::max<Index>(n, 1))
                                              : std::max<Index>(n, 1);
  MatrixX<S> jac;
  if (n == 0) {
    const VectorX<Dual<S>> y = f(VectorX<Dual<S>>());
    return MatrixX<S>::Constant(y.size(), 0, S(0.0));
  }
  for (Index start = 0; start < n; start += chunk) {
    const Index w = std::min(chunk, n - start);
    Eigen::MatrixXd seeds = Eigen::MatrixXd::Zero(n, w);
    seeds.block(start, 0, w, w).setIdentity();
    const VectorX<Dual<S>> y = f(lift(x, seeds));
    if (start == 0) jac = MatrixX<S>::Constant(y.size(), n, S(0.0));
    require_size(y.size(), jac.rows(), "jacobian output");
    jac.middleCols(start, w) = dual_partials(y, w);
  }
  return jac;
}

template <typename F, typename Derived>
Eigen::MatrixXd jacobian(F&& f, const Eigen::MatrixBase<Derived>& x, const JacobianOptions& opts = {}) {
  return jacobian<double>(std::forward<F>(f), VectorX<double>(x), opts);
}

}  // namespace iad
