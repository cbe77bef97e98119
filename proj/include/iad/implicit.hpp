#pragma once

#include "iad/forward.hpp"
#include "iad/linalg.hpp"
#include "iad/newton.hpp"
#include "iad/residual.hpp"
#include "iad/reverse.hpp"

#include <algorithm>
#include <functional>
#include <memory>
#include <optional>
#include <utility>

namespace iad {

/// Primal solver for y given x, as used by the implicit rules.
using PrimalSolver = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

/// Shared LU of dr/dy; passing it back in skips refactorization.
using FactorizationToken = std::shared_ptr<const DenseLU<double>>;

/**
 * A solved point (x, y*) with the factorization of dr/dy cached for every
 * forward seed and reverse seed applied at that point.
 */
class ImplicitNode {
 public:
  ImplicitNode() = default;

  template <typename Spec>
  ImplicitNode(const Spec& spec, Eigen::VectorXd x, Eigen::VectorXd y, FactorizationToken lu = nullptr)
      : x_(std::move(x)), y_(std::move(y)), lu_(std::move(lu)) {
    require_size(x_.size(), spec.nx, "implicit node input");
    require_size(y_.size(), spec.ny, "implicit node state");
    if (!lu_ && y_.size() > 0) {
      try {
        lu_ = std::make_shared<const DenseLU<double>>(spec.state_jacobian(x_, y_));
      } catch (const SingularMatrixError& e) {
        throw SingularJacobianError(std::string("dr/dy at the solution: ") + e.what());
      }
    }
  }

  const Eigen::VectorXd& x() const { return x_; }
  const Eigen::VectorXd& y() const { return y_; }
  const FactorizationToken& factorization() const { return lu_; }

  /// Tape of dr/dx at this point, recorded on first use.
  template <typename Spec>
  CompiledTape& input_tape(const Spec& spec) const {
    if (!tape_) {
      const Eigen::VectorXd y = y_;
      tape_ = compile([&](const VectorX<Var>& xv) { return spec.input_part(xv, VectorX<Var>(y.cast<Var>())); }, x_);
    }
    return *tape_;
  }

 private:
  Eigen::VectorXd x_;
  Eigen::VectorXd y_;
  FactorizationToken lu_;
  mutable std::optional<CompiledTape> tape_;
};

/// Newton's method wrapped as a PrimalSolver with a fixed initial guess.
template <typename Spec>
PrimalSolver newton_solver(const Spec& spec, Eigen::VectorXd y0, SolverConfig cfg = {}) {
  return [spec, y0 = std::move(y0), cfg](const Eigen::VectorXd& x) {
    return newton_solve(spec, VectorX<double>(x), y0, cfg).y;
  };
}

/**
 * Forward rule: y.value = solve(value(x)) and dr/dy ydot = -(dr/dx) xdot,
 * with the right-hand side from one residual evaluation at dual x and
 * constant y.
 */
template <typename Spec>
VectorX<Dual<double>> implicit_forward(const Spec& spec, const ImplicitNode& node, const VectorX<Dual<double>>& x) {
  require_size(x.size(), spec.nx, "implicit input");
  const Index k = seed_width(x);
  if (k == 0 || spec.ny == 0) return constant_duals(node.y());
  const VectorX<Dual<double>> r = spec.input_part(x, constant_duals(node.y()));
  const Eigen::MatrixXd b = -dual_partials(r, k);
  return make_duals(node.y(), node.factorization()->solve(b));
}

template <typename Spec>
VectorX<Dual<double>> implicit_forward(const Spec& spec, const PrimalSolver& solve, const VectorX<Dual<double>>& x) {
  const Eigen::VectorXd xv = dual_values(x);
  return implicit_forward(spec, ImplicitNode(spec, xv, solve(xv)), x);
}

/// Reverse rule: (dr/dy)^T lambda = ybar, then xbar = -lambda^T dr/dx.
template <typename Spec>
Eigen::VectorXd implicit_reverse(const Spec& spec, const ImplicitNode& node, const Eigen::VectorXd& ybar) {
  require_size(ybar.size(), spec.ny, "implicit reverse seed");
  if (spec.nx == 0) return Eigen::VectorXd();
  if (spec.ny == 0 || ybar.isZero(0.0)) return Eigen::VectorXd::Zero(spec.nx);
  const Eigen::VectorXd lambda = node.factorization()->solve_transposed(ybar);
  return node.input_tape(spec).vjp(-lambda);
}

/// Reverse rule for several seeds (ny by k) with one transposed solve.
template <typename Spec>
Eigen::MatrixXd implicit_reverse_many(const Spec& spec, const ImplicitNode& node, const Eigen::MatrixXd& ybar) {
  require_size(ybar.rows(), spec.ny, "implicit reverse seed rows");
  if (spec.nx == 0 || spec.ny == 0) return Eigen::MatrixXd::Zero(spec.nx, ybar.cols());
  const Eigen::MatrixXd lambda = node.factorization()->solve_transposed(ybar);
  return node.input_tape(spec).vjp_many(-lambda);
}

namespace detail {

template <typename Spec>
class ImplicitBlock final : public BlockRule {
 public:
  ImplicitBlock(Spec spec, PrimalSolver solve, ImplicitNode node)
      : spec_(std::move(spec)), solve_(std::move(solve)), node_(std::move(node)) {}

  void forward(std::span<const double> x, std::span<double> y) override {
    const Eigen::VectorXd xv = Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Index>(x.size()));
    node_ = ImplicitNode(spec_, xv, solve_(xv));
    Eigen::Map<Eigen::VectorXd>(y.data(), static_cast<Index>(y.size())) = node_.y();
  }

  void pullback(std::span<const double> ybar, std::span<double> xbar) override {
    const Eigen::VectorXd yb = Eigen::Map<const Eigen::VectorXd>(ybar.data(), static_cast<Index>(ybar.size()));
    Eigen::Map<Eigen::VectorXd>(xbar.data(), static_cast<Index>(xbar.size())) += implicit_reverse(spec_, node_, yb);
  }

  void pullback_many(const Eigen::MatrixXd& ybar, Eigen::MatrixXd& xbar) override {
    xbar += implicit_reverse_many(spec_, node_, ybar);
  }

 private:
  Spec spec_;
  PrimalSolver solve_;
  ImplicitNode node_;
};

inline VectorX<Var> to_var_vector(const std::vector<Var>& v) {
  VectorX<Var> out(static_cast<Index>(v.size()));
  for (Index i = 0; i < out.size(); ++i) out(i) = v[static_cast<std::size_t>(i)];
  return out;
}

}  // namespace detail

/**
 * Solve r(x, y) = 0 for y as one differentiable node. The scalar type of x
 * picks the rule: plain values, forward duals, or a reverse-mode tape (the
 * solve is recorded as a single block, not unrolled).
 */
template <typename Spec>
Eigen::VectorXd implicit(const Spec& spec, const PrimalSolver& solve, const Eigen::VectorXd& x) {
  require_size(x.size(), spec.nx, "implicit input");
  return solve(x);
}

template <typename Spec>
VectorX<Dual<double>> implicit(const Spec& spec, const PrimalSolver& solve, const VectorX<Dual<double>>& x) {
  return implicit_forward(spec, solve, x);
}

template <typename Spec>
VectorX<Var> implicit(const Spec& spec, const PrimalSolver& solve, const VectorX<Var>& x) {
  require_size(x.size(), spec.nx, "implicit input");
  const Eigen::VectorXd xv = primal_values(x);
  ImplicitNode node(spec, xv, solve(xv));
  const Eigen::VectorXd y = node.y();
  bool any_active = false;
  for (Index i = 0; i < x.size(); ++i) any_active = any_active || x(i).is_active();
  if (!any_active || y.size() == 0) return y.cast<Var>();
  auto rule = std::make_shared<detail::ImplicitBlock<Spec>>(spec, solve, std::move(node));
  return detail::to_var_vector(detail::require_tape().push_block(
      std::move(rule), std::span<const Var>(x.data(), static_cast<std::size_t>(x.size())),
      std::span<const double>(y.data(), static_cast<std::size_t>(y.size()))));
}

// ---------------------------------------------------------------------------
// Fixed points y = f(x, y)

/**
 * Fixed-point problem y = f(x, y). The rules use dr/dy = df/dy - I and
 * dr/dx = df/dx directly; no residual wrapper is formed.
 */
template <typename Map>
struct FixedPointSpec {
  Index nx = 0;
  Index ny = 0;
  Map f;
  double tolerance = 1e-12;
  int max_iterations = 10000;

  template <typename S>
  VectorX<S> operator()(const VectorX<S>& x, const VectorX<S>& y) const {
    VectorX<S> out = f(x, y);
    require_size(out.size(), ny, "fixed-point map output");
    return out;
  }

  Eigen::MatrixXd state_jacobian(const Eigen::VectorXd& x, const Eigen::VectorXd& y) const {
    const VectorX<Dual<double>> xc = constant_duals(VectorX<double>(x));
    Eigen::MatrixXd j = jacobian<double>([&](const auto& yd) { return (*this)(xc, yd); }, VectorX<double>(y),
                                         JacobianOptions{0});
    j.diagonal().array() -= 1.0;
    return j;
  }

  template <typename S>
  VectorX<S> input_part(const VectorX<S>& x, const VectorX<S>& y) const {
    return (*this)(x, y);
  }
};

template <typename Map>
FixedPointSpec<Map> make_fixed_point_spec(Index nx, Index ny, Map f) {
  return {nx, ny, std::move(f)};
}

/// Plain iteration y <- f(x, y) until the update is below the tolerance.
template <typename Map>
Eigen::VectorXd fixed_point_solve(const FixedPointSpec<Map>& spec, const Eigen::VectorXd& x, Eigen::VectorXd y0) {
  require_size(x.size(), spec.nx, "fixed-point input");
  require_size(y0.size(), spec.ny, "fixed-point initial guess");
  Eigen::VectorXd y = std::move(y0);
  const VectorX<double> xv = x;
  for (int it = 0; it < spec.max_iterations; ++it) {
    Eigen::VectorXd next = spec(xv, VectorX<double>(y));
    const double step = (next - y).lpNorm<Eigen::Infinity>();
    y = std::move(next);
    if (!std::isfinite(step)) throw NonFiniteError("fixed-point iteration produced a non-finite value");
    if (step <= spec.tolerance) return y;
  }
  throw ConvergenceError("fixed-point iteration did not converge in " + std::to_string(spec.max_iterations) +
                         " iterations");
}

template <typename Map>
PrimalSolver fixed_point_solver(const FixedPointSpec<Map>& spec, Eigen::VectorXd y0) {
  return [spec, y0 = std::move(y0)](const Eigen::VectorXd& x) { return fixed_point_solve(spec, x, y0); };
}

template <typename Map>
VectorX<Dual<double>> fixed_point_forward(const FixedPointSpec<Map>& spec, const Eigen::VectorXd& y0,
                                          const VectorX<Dual<double>>& x) {
  return implicit_forward(spec, fixed_point_solver(spec, y0), x);
}

template <typename Map>
Eigen::VectorXd fixed_point_reverse(const FixedPointSpec<Map>& spec, const ImplicitNode& node,
                                    const Eigen::VectorXd& ybar) {
  return implicit_reverse(spec, node, ybar);
}

template <typename Map, typename X>
auto fixed_point(const FixedPointSpec<Map>& spec, const Eigen::VectorXd& y0, const X& x) {
  return implicit(spec, fixed_point_solver(spec, y0), x);
}

// ---------------------------------------------------------------------------
// Linear systems A y = b

/// Forward rule for A y = b: A ydot = bdot - Adot y, one factorization.
inline VectorX<Dual<double>> linear_rule_forward(const MatrixX<Dual<double>>& a, const VectorX<Dual<double>>& b) {
  require_size(a.rows(), b.size(), "linear system rows");
  const Index n = b.size();
  Eigen::MatrixXd av(a.rows(), a.cols());
  for (Index j = 0; j < a.cols(); ++j)
    for (Index i = 0; i < a.rows(); ++i) av(i, j) = a(i, j).value;
  const DenseLU<double> lu(av);
  const Eigen::VectorXd y = lu.solve(dual_values(b));

  Index k = seed_width(b);
  for (Index j = 0; j < a.cols() && k == 0; ++j)
    for (Index i = 0; i < a.rows() && k == 0; ++i) k = a(i, j).width();
  if (k == 0) return constant_duals(VectorX<double>(y));

  Eigen::MatrixXd rhs = dual_partials(b, k);
  for (Index j = 0; j < n; ++j) {
    for (Index i = 0; i < n; ++i) {
      const auto& p = a(i, j).partials;
      if (p.size() == 0) continue;
      detail::check_width(p.size(), k);
      rhs.row(i) -= y(j) * p.transpose();
    }
  }
  return make_duals(VectorX<double>(y), MatrixX<double>(lu.solve(rhs)));
}

/// Solved linear system kept for reverse seeds.
struct LinearNode {
  Eigen::VectorXd y;
  FactorizationToken lu;

  LinearNode() = default;
  LinearNode(const Eigen::MatrixXd& a, const Eigen::VectorXd& b)
      : lu(std::make_shared<const DenseLU<double>>(a)) {
    y = lu->solve(b);
  }
};

struct LinearAdjoint {
  Eigen::MatrixXd abar;
  Eigen::VectorXd bbar;
};

/// Reverse rule for A y = b: A^T lambda = ybar, bbar = lambda, Abar = -lambda y^T.
inline LinearAdjoint linear_rule_reverse(const LinearNode& node, const Eigen::VectorXd& ybar) {
  require_size(ybar.size(), node.y.size(), "linear reverse seed");
  LinearAdjoint out;
  out.bbar = node.lu->solve_transposed(ybar);
  out.abar = -out.bbar * node.y.transpose();
  return out;
}

namespace detail {

class LinearBlock final : public BlockRule {
 public:
  LinearBlock(Index n, LinearNode node) : n_(n), node_(std::move(node)) {}

  // Inputs are A in column-major order followed by b.
  void forward(std::span<const double> x, std::span<double> y) override {
    const Eigen::Map<const Eigen::MatrixXd> a(x.data(), n_, n_);
    const Eigen::Map<const Eigen::VectorXd> b(x.data() + n_ * n_, n_);
    node_ = LinearNode(a, b);
    Eigen::Map<Eigen::VectorXd>(y.data(), n_) = node_.y;
  }

  void pullback(std::span<const double> ybar, std::span<double> xbar) override {
    const LinearAdjoint adj = linear_rule_reverse(node_, Eigen::Map<const Eigen::VectorXd>(ybar.data(), n_));
    Eigen::Map<Eigen::MatrixXd>(xbar.data(), n_, n_) += adj.abar;
    Eigen::Map<Eigen::VectorXd>(xbar.data() + n_ * n_, n_) += adj.bbar;
  }

 private:
  Index n_;
  LinearNode node_;
};

}  // namespace detail

inline Eigen::VectorXd linear_solve(const Eigen::MatrixXd& a, const Eigen::VectorXd& b) {
  return DenseLU<double>(a).solve(VectorX<double>(b));
}

inline VectorX<Dual<double>> linear_solve(const MatrixX<Dual<double>>& a, const VectorX<Dual<double>>& b) {
  return linear_rule_forward(a, b);
}

inline VectorX<Var> linear_solve(const MatrixX<Var>& a, const VectorX<Var>& b) {
  require_size(a.rows(), b.size(), "linear system rows");
  require_size(a.cols(), b.size(), "linear system cols");
  const Index n = b.size();
  std::vector<Var> inputs;
  inputs.reserve(static_cast<std::size_t>(n * n + n));
  for (Index j = 0; j < n; ++j)
    for (Index i = 0; i < n; ++i) inputs.push_back(a(i, j));
  for (Index i = 0; i < n; ++i) inputs.push_back(b(i));
  Eigen::MatrixXd av(n, n);
  for (Index j = 0; j < n; ++j)
    for (Index i = 0; i < n; ++i) av(i, j) = a(i, j).value();
  LinearNode node(av, primal_values(b));
  const Eigen::VectorXd y = node.y;
  if (std::none_of(inputs.begin(), inputs.end(), [](const Var& v) { return v.is_active(); })) return y.cast<Var>();
  auto rule = std::make_shared<detail::LinearBlock>(n, std::move(node));
  return detail::to_var_vector(
      detail::require_tape().push_block(std::move(rule), inputs, std::span<const double>(y.data(), y.size())));
}

}  // namespace iad
