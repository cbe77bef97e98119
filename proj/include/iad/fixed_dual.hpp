#pragma once

#include "iad/core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <type_traits>

namespace iad {

/**
 * Dual number with a compile-time number of partials, held in a fixed Eigen
 * vector. Constants carry explicit zeros. Meant for chunked forward passes
 * through fully generic code where the per-operation cost of Dual<double>
 * dominates; it does not nest and has no implicit or external rules.
 */
template <int N>
struct FixedDual {
  static_assert(N > 0, "FixedDual needs a positive width");
  using Partials = Eigen::Matrix<double, N, 1>;

  double value = 0.0;
  Partials partials = Partials::Zero();

  FixedDual() = default;
  template <typename A>
    requires std::is_arithmetic_v<A>
  FixedDual(A v) : value(static_cast<double>(v)) {}  // NOLINT
  FixedDual(double v, const Partials& p) : value(v), partials(p) {}

  FixedDual& operator+=(const FixedDual& o) {
    value += o.value;
    partials += o.partials;
    return *this;
  }
  FixedDual& operator-=(const FixedDual& o) {
    value -= o.value;
    partials -= o.partials;
    return *this;
  }
  FixedDual& operator*=(const FixedDual& o) { return *this = *this * o; }
  FixedDual& operator/=(const FixedDual& o) { return *this = *this / o; }

  friend FixedDual operator+(const FixedDual& a, const FixedDual& b) { return {a.value + b.value, a.partials + b.partials}; }
  friend FixedDual operator-(const FixedDual& a, const FixedDual& b) { return {a.value - b.value, a.partials - b.partials}; }
  friend FixedDual operator-(const FixedDual& a) { return {-a.value, -a.partials}; }
  friend FixedDual operator*(const FixedDual& a, const FixedDual& b) {
    return {a.value * b.value, b.value * a.partials + a.value * b.partials};
  }
  friend FixedDual operator/(const FixedDual& a, const FixedDual& b) {
    const double inv = 1.0 / b.value;
    const double q = a.value * inv;
    return {q, inv * (a.partials - q * b.partials)};
  }

  friend FixedDual operator+(const FixedDual& a, double b) { return {a.value + b, a.partials}; }
  friend FixedDual operator+(double a, const FixedDual& b) { return {a + b.value, b.partials}; }
  friend FixedDual operator-(const FixedDual& a, double b) { return {a.value - b, a.partials}; }
  friend FixedDual operator-(double a, const FixedDual& b) { return {a - b.value, -b.partials}; }
  friend FixedDual operator*(const FixedDual& a, double b) { return {a.value * b, b * a.partials}; }
  friend FixedDual operator*(double a, const FixedDual& b) { return {a * b.value, a * b.partials}; }
  friend FixedDual operator/(const FixedDual& a, double b) { return {a.value / b, a.partials / b}; }
  friend FixedDual operator/(double a, const FixedDual& b) {
    const double q = a / b.value;
    return {q, (-q / b.value) * b.partials};
  }

  friend bool operator<(const FixedDual& a, const FixedDual& b) { return a.value < b.value; }
  friend bool operator>(const FixedDual& a, const FixedDual& b) { return a.value > b.value; }
  friend bool operator<=(const FixedDual& a, const FixedDual& b) { return a.value <= b.value; }
  friend bool operator>=(const FixedDual& a, const FixedDual& b) { return a.value >= b.value; }
  friend bool operator==(const FixedDual& a, const FixedDual& b) { return a.value == b.value; }
  friend bool operator!=(const FixedDual& a, const FixedDual& b) { return a.value != b.value; }
};

template <int N>
double primal(const FixedDual<N>& d) {
  return d.value;
}

template <int N>
FixedDual<N> exp(const FixedDual<N>& a) {
  const double e = std::exp(a.value);
  return {e, e * a.partials};
}
template <int N>
FixedDual<N> log(const FixedDual<N>& a) {
  return {std::log(a.value), a.partials / a.value};
}
template <int N>
FixedDual<N> sqrt(const FixedDual<N>& a) {
  const double s = std::sqrt(a.value);
  return {s, (0.5 / s) * a.partials};
}
template <int N>
FixedDual<N> sin(const FixedDual<N>& a) {
  return {std::sin(a.value), std::cos(a.value) * a.partials};
}
template <int N>
FixedDual<N> cos(const FixedDual<N>& a) {
  return {std::cos(a.value), -std::sin(a.value) * a.partials};
}
template <int N>
FixedDual<N> tanh(const FixedDual<N>& a) {
  const double t = std::tanh(a.value);
  return {t, (1.0 - t * t) * a.partials};
}
template <int N>
FixedDual<N> abs(const FixedDual<N>& a) {
  const double sign = a.value > 0.0 ? 1.0 : (a.value < 0.0 ? -1.0 : 0.0);
  return {std::abs(a.value), sign * a.partials};
}
template <int N>
FixedDual<N> pow(const FixedDual<N>& a, double p) {
  return {std::pow(a.value, p), p * std::pow(a.value, p - 1.0) * a.partials};
}
template <int N>
FixedDual<N> pow(const FixedDual<N>& a, int p) {
  return pow(a, static_cast<double>(p));
}
template <int N>
bool isfinite(const FixedDual<N>& a) {
  return std::isfinite(a.value);
}

/**
 * Dense Jacobian with a compile-time chunk width: ceil(n / N) forward passes
 * of `f` over VectorX<FixedDual<N>>. `f` must be generic and use only
 * elementary operations.
 */
template <int N, typename F>
Eigen::MatrixXd jacobian_chunked(F&& f, const Eigen::VectorXd& x) {
  using D = FixedDual<N>;
  const Index n = x.size();
  Eigen::MatrixXd jac;
  if (n == 0) {
    const VectorX<D> y = f(VectorX<D>());
    return Eigen::MatrixXd::Zero(y.size(), 0);
  }
  VectorX<D> xd(n);
  for (Index i = 0; i < n; ++i) xd(i).value = x(i);
  for (Index start = 0; start < n; start += N) {
    const Index w = std::min<Index>(N, n - start);
    for (Index j = 0; j < w; ++j) xd(start + j).partials(j) = 1.0;
    const VectorX<D> y = f(xd);
    for (Index j = 0; j < w; ++j) xd(start + j).partials(j) = 0.0;
    if (start == 0) jac = Eigen::MatrixXd::Zero(y.size(), n);
    require_size(y.size(), jac.rows(), "jacobian output");
    for (Index i = 0; i < y.size(); ++i) jac.row(i).segment(start, w) = y(i).partials.head(w).transpose();
  }
  return jac;
}

}  // namespace iad

namespace Eigen {

template <int N>
struct NumTraits<iad::FixedDual<N>> : NumTraits<double> {
  using Real = iad::FixedDual<N>;
  using NonInteger = iad::FixedDual<N>;
  using Nested = iad::FixedDual<N>;
  using Literal = iad::FixedDual<N>;

  enum {
    IsComplex = 0,
    IsInteger = 0,
    IsSigned = 1,
    RequireInitialization = 1,
    ReadCost = 1,
    AddCost = N,
    MulCost = 2 * N,
  };

  static inline Real epsilon() { return Real(std::numeric_limits<double>::epsilon()); }
  static inline Real dummy_precision() { return Real(1e-12); }
  static inline Real highest() { return Real(std::numeric_limits<double>::max()); }
  static inline Real lowest() { return Real(std::numeric_limits<double>::lowest()); }
  static inline int digits10() { return NumTraits<double>::digits10(); }
};

}  // namespace Eigen
