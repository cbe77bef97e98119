#include "iad/external.hpp"

#include <algorithm>
#include <cmath>

namespace iad {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

double fd_step(double h0, const Eigen::VectorXd& x, const Eigen::VectorXd& dir) {
  const double xs = std::max(1.0, x.lpNorm<Eigen::Infinity>());
  const double ds = std::max(1.0, dir.size() ? dir.lpNorm<Eigen::Infinity>() : 0.0);
  return h0 * xs / ds;
}

Eigen::VectorXd fd_direction(const ExternalFunctionSpec& spec, double h0, const Eigen::VectorXd& x,
                             const Eigen::VectorXd& z, const Eigen::VectorXd& dir) {
  const double h = fd_step(h0, x, dir);
  const Eigen::VectorXd zp = spec.evaluate(x + h * dir);
  Eigen::VectorXd d = (zp - z) / h;
  if (!d.allFinite()) throw NonFiniteError("non-finite finite-difference derivative of external function");
  return d;
}

Eigen::MatrixXd fd_jacobian(const ExternalFunctionSpec& spec, double h0, const Eigen::VectorXd& x,
                            const Eigen::VectorXd& z) {
  Eigen::MatrixXd jac(spec.nz(), spec.nx());
  for (Index j = 0; j < spec.nx(); ++j) jac.col(j) = fd_direction(spec, h0, x, z, Eigen::VectorXd::Unit(spec.nx(), j));
  return jac;
}

void check_jacobian(const Eigen::MatrixXd& jac, const ExternalFunctionSpec& spec) {
  require_size(jac.rows(), spec.nz(), "external jacobian rows");
  require_size(jac.cols(), spec.nx(), "external jacobian cols");
}

class ExternalBlock final : public BlockRule {
 public:
  ExternalBlock(ExternalFunctionSpec spec, ExternalNode node) : spec_(std::move(spec)), node_(std::move(node)) {}

  void forward(std::span<const double> x, std::span<double> y) override {
    node_ = external_record(spec_, Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Index>(x.size())));
    Eigen::Map<Eigen::VectorXd>(y.data(), static_cast<Index>(y.size())) = node_.z;
  }

  void pullback(std::span<const double> ybar, std::span<double> xbar) override {
    const Eigen::VectorXd zb = Eigen::Map<const Eigen::VectorXd>(ybar.data(), static_cast<Index>(ybar.size()));
    Eigen::Map<Eigen::VectorXd>(xbar.data(), static_cast<Index>(xbar.size())) += external_reverse(spec_, node_, zb);
  }

 private:
  ExternalFunctionSpec spec_;
  ExternalNode node_;
};

}  // namespace

ExternalFunctionSpec::ExternalFunctionSpec(Index nx, Index nz, Primal primal, DerivativeProvider provider,
                                           bool reentrant)
    : nx_(nx),
      nz_(nz),
      primal_(std::move(primal)),
      provider_(std::move(provider)),
      reentrant_(reentrant),
      shared_(std::make_shared<Shared>()) {
  if (nx < 0 || nz < 0) throw DimensionError("external function dimensions must be non-negative");
  if (!primal_) throw Error("external function needs a primal callable");
  std::visit(overloaded{
                 [](const JacobianProvider& p) {
                   if (!p.jacobian) throw Error("empty Jacobian provider");
                 },
                 [](const JvpProvider& p) {
                   if (!p.jvp) throw Error("empty JVP provider");
                 },
                 [](const VjpProvider& p) {
                   if (!p.vjp) throw Error("empty VJP provider");
                 },
                 [](const FiniteDifference& p) {
                   if (!(p.h0 > 0.0)) throw Error("finite-difference step must be positive");
                 },
             },
             provider_);
}

Eigen::VectorXd ExternalFunctionSpec::evaluate(const Eigen::VectorXd& x) const {
  require_size(x.size(), nx_, "external function input");
  shared_->calls.fetch_add(1);
  Eigen::VectorXd z;
  if (reentrant_) {
    z = primal_(x);
  } else {
    std::lock_guard<std::mutex> lock(shared_->mutex);
    z = primal_(x);
  }
  require_size(z.size(), nz_, "external function output");
  return z;
}

ExternalNode external_record(const ExternalFunctionSpec& spec, const Eigen::VectorXd& x) {
  ExternalNode node;
  node.x = x;
  node.z = spec.evaluate(x);
  return node;
}

Eigen::MatrixXd external_jacobian(const ExternalFunctionSpec& spec, const ExternalNode& node) {
  if (node.jacobian) return *node.jacobian;
  const Index nx = spec.nx();
  const Index nz = spec.nz();
  Eigen::MatrixXd jac = std::visit(
      overloaded{
          [&](const JacobianProvider& p) -> Eigen::MatrixXd { return p.jacobian(node.x); },
          [&](const JvpProvider& p) -> Eigen::MatrixXd {
            Eigen::MatrixXd j(nz, nx);
            for (Index c = 0; c < nx; ++c) j.col(c) = p.jvp(node.x, Eigen::VectorXd::Unit(nx, c));
            return j;
          },
          [&](const VjpProvider& p) -> Eigen::MatrixXd {
            Eigen::MatrixXd j(nz, nx);
            for (Index r = 0; r < nz; ++r) j.row(r) = p.vjp(node.x, Eigen::VectorXd::Unit(nz, r)).transpose();
            return j;
          },
          [&](const FiniteDifference& p) -> Eigen::MatrixXd { return fd_jacobian(spec, p.h0, node.x, node.z); },
      },
      spec.provider());
  check_jacobian(jac, spec);
  node.jacobian = jac;
  return jac;
}

VectorX<Dual<double>> external_forward(const ExternalFunctionSpec& spec, const VectorX<Dual<double>>& x) {
  require_size(x.size(), spec.nx(), "external function input");
  const Eigen::VectorXd xv = dual_values(x);
  const Eigen::VectorXd z = spec.evaluate(xv);
  const Index k = seed_width(x);
  if (k == 0) return constant_duals(VectorX<double>(z));
  const Eigen::MatrixXd xdot = dual_partials(x, k);
  const Index nx = spec.nx();

  Eigen::MatrixXd zdot(spec.nz(), k);
  std::visit(overloaded{
                 [&](const JacobianProvider& p) {
                   const Eigen::MatrixXd jac = p.jacobian(xv);
                   check_jacobian(jac, spec);
                   zdot.noalias() = jac * xdot;
                 },
                 [&](const JvpProvider& p) {
                   for (Index c = 0; c < k; ++c) {
                     const Eigen::VectorXd col = p.jvp(xv, xdot.col(c));
                     require_size(col.size(), spec.nz(), "external JVP output");
                     zdot.col(c) = col;
                   }
                 },
                 [&](const VjpProvider&) {
                   ExternalNode node{xv, z, std::nullopt};
                   zdot.noalias() = external_jacobian(spec, node) * xdot;
                 },
                 [&](const FiniteDifference& p) {
                   if (nx < k) {
                     zdot.noalias() = fd_jacobian(spec, p.h0, xv, z) * xdot;
                   } else {
                     for (Index c = 0; c < k; ++c) zdot.col(c) = fd_direction(spec, p.h0, xv, z, xdot.col(c));
                   }
                 },
             },
             spec.provider());
  return make_duals(VectorX<double>(z), MatrixX<double>(zdot));
}

Eigen::VectorXd external_reverse(const ExternalFunctionSpec& spec, const ExternalNode& node,
                                 const Eigen::VectorXd& zbar) {
  require_size(zbar.size(), spec.nz(), "external reverse seed");
  if (zbar.isZero(0.0)) return Eigen::VectorXd::Zero(spec.nx());
  if (const auto* p = std::get_if<VjpProvider>(&spec.provider())) {
    Eigen::VectorXd xbar = p->vjp(node.x, zbar);
    require_size(xbar.size(), spec.nx(), "external VJP output");
    return xbar;
  }
  return external_jacobian(spec, node).transpose() * zbar;
}

ValidationReport validate(const ExternalFunctionSpec& spec, const Eigen::VectorXd& x, double rtol) {
  const ExternalNode node = external_record(spec, x);
  const Eigen::MatrixXd provided = external_jacobian(spec, node);
  Eigen::MatrixXd fd(spec.nz(), spec.nx());
  for (Index j = 0; j < spec.nx(); ++j) {
    const double h = 1e-6 * std::max(1.0, std::abs(x(j)));
    Eigen::VectorXd xp = x;
    Eigen::VectorXd xm = x;
    xp(j) += h;
    xm(j) -= h;
    fd.col(j) = (spec.evaluate(xp) - spec.evaluate(xm)) / (2.0 * h);
  }
  ValidationReport report;
  const double scale = fd.size() ? fd.cwiseAbs().maxCoeff() : 0.0;
  const double diff = fd.size() ? (provided - fd).cwiseAbs().maxCoeff() : 0.0;
  report.max_rel_err = scale > 1e-8 ? diff / scale : diff;
  report.ok = report.max_rel_err <= rtol;
  return report;
}

Eigen::VectorXd external(const ExternalFunctionSpec& spec, const Eigen::VectorXd& x) { return spec.evaluate(x); }

VectorX<Dual<double>> external(const ExternalFunctionSpec& spec, const VectorX<Dual<double>>& x) {
  return external_forward(spec, x);
}

VectorX<Var> external(const ExternalFunctionSpec& spec, const VectorX<Var>& x) {
  require_size(x.size(), spec.nx(), "external function input");
  ExternalNode node = external_record(spec, primal_values(x));
  const Eigen::VectorXd z = node.z;
  const bool any_active = std::any_of(x.data(), x.data() + x.size(), [](const Var& v) { return v.is_active(); });
  if (!any_active || z.size() == 0) return z.cast<Var>();
  auto rule = std::make_shared<ExternalBlock>(spec, std::move(node));
  const std::vector<Var> out = detail::require_tape().push_block(
      std::move(rule), std::span<const Var>(x.data(), static_cast<std::size_t>(x.size())),
      std::span<const double>(z.data(), static_cast<std::size_t>(z.size())));
  VectorX<Var> result(z.size());
  for (Index i = 0; i < result.size(); ++i) result(i) = out[static_cast<std::size_t>(i)];
  return result;
}

}  // namespace iad
