#pragma once

#include "iad/forward.hpp"
#include "iad/tape.hpp"

#include <atomic>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <variant>

namespace iad {

/// The external code supplies its full Jacobian dz/dx.
struct JacobianProvider {
  std::function<Eigen::MatrixXd(const Eigen::VectorXd& x)> jacobian;
};

/// The external code supplies J v.
struct JvpProvider {
  std::function<Eigen::VectorXd(const Eigen::VectorXd& x, const Eigen::VectorXd& v)> jvp;
};

/// The external code supplies J^T w.
struct VjpProvider {
  std::function<Eigen::VectorXd(const Eigen::VectorXd& x, const Eigen::VectorXd& w)> vjp;
};

/// No derivatives available: one-sided finite differences of the primal.
struct FiniteDifference {
  /// Relative step; the actual step is h0 max(1, |x|_inf) / max(1, |dir|_inf).
  double h0 = 1e-6;
};

using DerivativeProvider = std::variant<JacobianProvider, JvpProvider, VjpProvider, FiniteDifference>;

/**
 * An explicit function z = z(x) computed outside the AD system, with one
 * way of obtaining its derivatives.
 *
 * Copies share the call counter and the lock. Unless declared reentrant,
 * primal calls through the spec are serialized.
 */
class ExternalFunctionSpec {
 public:
  using Primal = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

  ExternalFunctionSpec(Index nx, Index nz, Primal primal, DerivativeProvider provider, bool reentrant = false);

  Index nx() const { return nx_; }
  Index nz() const { return nz_; }
  const DerivativeProvider& provider() const { return provider_; }
  bool reentrant() const { return reentrant_; }

  /// Run the external primal; counts the call.
  Eigen::VectorXd evaluate(const Eigen::VectorXd& x) const;

  Index primal_calls() const { return shared_->calls.load(); }
  void reset_primal_calls() const { shared_->calls.store(0); }

 private:
  struct Shared {
    std::mutex mutex;
    std::atomic<Index> calls{0};
  };

  Index nx_;
  Index nz_;
  Primal primal_;
  DerivativeProvider provider_;
  bool reentrant_;
  std::shared_ptr<Shared> shared_;
};

/// Forward-pass record kept for reverse seeds.
struct ExternalNode {
  Eigen::VectorXd x;
  Eigen::VectorXd z;
  /// Jacobian assembled on first reverse use when the provider has no VJP.
  mutable std::optional<Eigen::MatrixXd> jacobian;
};

/**
 * zdot = J xdot for every seed column. With finite differences the cheaper
 * of nx Jacobian columns or k directional differences is used, so exactly
 * min(nx, k) + 1 primal calls are made.
 */
VectorX<Dual<double>> external_forward(const ExternalFunctionSpec& spec, const VectorX<Dual<double>>& x);

/// Evaluate and keep the point for later reverse seeds.
ExternalNode external_record(const ExternalFunctionSpec& spec, const Eigen::VectorXd& x);

/// xbar = J^T zbar. Without a VJP provider J is assembled once per node.
Eigen::VectorXd external_reverse(const ExternalFunctionSpec& spec, const ExternalNode& node,
                                 const Eigen::VectorXd& zbar);

/// Dense Jacobian from whatever the provider offers (nx or nz provider calls).
Eigen::MatrixXd external_jacobian(const ExternalFunctionSpec& spec, const ExternalNode& node);

struct ValidationReport {
  double max_rel_err = 0.0;
  bool ok = false;
};

/// Compare the provider's Jacobian at x with central differences of the primal.
ValidationReport validate(const ExternalFunctionSpec& spec, const Eigen::VectorXd& x, double rtol = 1e-3);

Eigen::VectorXd external(const ExternalFunctionSpec& spec, const Eigen::VectorXd& x);
VectorX<Dual<double>> external(const ExternalFunctionSpec& spec, const VectorX<Dual<double>>& x);
/// Records the call as one block on the active tape.
VectorX<Var> external(const ExternalFunctionSpec& spec, const VectorX<Var>& x);

}  // namespace iad
