#pragma once

#include "iad/core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <type_traits>

namespace iad {

namespace detail {

/// Partials of a scalar dual: up to kInline entries stored in place, wider
/// vectors on the heap. Indexing and Eigen views mirror VectorXd.
class InlinePartials {
 public:
  static constexpr Index kInline = 16;

  InlinePartials() = default;
  explicit InlinePartials(Index n) { resize(n); }
  template <typename Derived>
  InlinePartials(const Eigen::DenseBase<Derived>& v) {  // NOLINT: mirrors VectorXd
    resize(v.size());
    map() = v;
  }
  InlinePartials(const InlinePartials& o) { copy_from(o); }
  InlinePartials(InlinePartials&& o) noexcept { move_from(std::move(o)); }
  InlinePartials& operator=(const InlinePartials& o) {
    if (this != &o) copy_from(o);
    return *this;
  }
  InlinePartials& operator=(InlinePartials&& o) noexcept {
    if (this != &o) move_from(std::move(o));
    return *this;
  }

  static InlinePartials Zero(Index n) {
    InlinePartials p(n);
    std::fill_n(p.data(), n, 0.0);
    return p;
  }

  Index size() const { return size_; }
  double* data() { return heap_ ? heap_.get() : inline_; }
  const double* data() const { return heap_ ? heap_.get() : inline_; }
  double& operator()(Index i) { return data()[i]; }
  double operator()(Index i) const { return data()[i]; }

  Eigen::Map<Eigen::VectorXd> map() { return {data(), size_}; }
  Eigen::Map<const Eigen::VectorXd> map() const { return {data(), size_}; }
  auto transpose() const { return map().transpose(); }

  void resize(Index n) {
    if (n > kInline && n > capacity_) {
      heap_.reset(new double[static_cast<std::size_t>(n)]);
      capacity_ = n;
    } else if (n <= kInline) {
      heap_.reset();
      capacity_ = 0;
    }
    size_ = n;
  }

 private:
  void copy_from(const InlinePartials& o) {
    resize(o.size_);
    std::copy_n(o.data(), o.size_, data());
  }
  void move_from(InlinePartials&& o) {
    if (o.heap_) {
      heap_ = std::move(o.heap_);
      capacity_ = o.capacity_;
      size_ = o.size_;
      o.capacity_ = 0;
      o.size_ = 0;
    } else {
      copy_from(o);
    }
  }

  Index size_ = 0;
  Index capacity_ = 0;
  std::unique_ptr<double[]> heap_;
  double inline_[kInline];
};

template <typename T>
using PartialsFor = std::conditional_t<std::is_same_v<T, double>, InlinePartials, VectorX<T>>;

}  // namespace detail

/**
 * Forward-mode dual number: a primal value plus a vector of partial
 * derivatives with respect to the seeded directions.
 *
 * The value type is itself generic so that duals nest (Dual<Dual<double>>)
 * or ride on top of a taped scalar (Dual<Var>). An empty partials vector
 * stands for "all zero at whatever width the computation uses", which keeps
 * promoted constants free of allocations. Two non-empty partials vectors
 * meeting in one operation must have the same width.
 */
template <typename T>
struct Dual {
  using Value = T;
  using Partials = detail::PartialsFor<T>;

  T value{};
  Partials partials;

  Dual() = default;
  Dual(const T& v) : value(v) {}  // NOLINT: constants convert implicitly
  template <typename A>
    requires(std::is_arithmetic_v<A> && !std::is_same_v<A, T>)
  Dual(A v) : value(static_cast<T>(v)) {}  // NOLINT
  Dual(const T& v, Partials p) : value(v), partials(std::move(p)) {}

  /// A constant with explicitly materialized zero partials.
  static Dual constant(const T& v, Index width) { return Dual(v, Partials::Zero(width)); }

  Index width() const { return partials.size(); }

  /// i-th partial, zero when the partials are implicit.
  T partial(Index i) const { return partials.size() == 0 ? T(0.0) : partials(i); }

  Dual& operator+=(const Dual& o) { return *this = *this + o; }
  Dual& operator-=(const Dual& o) { return *this = *this - o; }
  Dual& operator*=(const Dual& o) { return *this = *this * o; }
  Dual& operator/=(const Dual& o) { return *this = *this / o; }
};

template <typename T>
struct is_dual : std::false_type {};
template <typename T>
struct is_dual<Dual<T>> : std::true_type {};
template <typename T>
inline constexpr bool is_dual_v = is_dual<T>::value;

/// U can stand in for the value type of Dual<T> as a constant operand.
template <typename U, typename T>
concept PassiveFor = !std::is_same_v<std::remove_cvref_t<U>, Dual<T>> && std::is_convertible_v<const U&, T>;

template <typename T>
double primal(const Dual<T>& d) {
  return primal(d.value);
}

namespace detail {

inline void check_width(Index a, Index b) {
  if (a != b) {
    throw DimensionError("dual partials width mismatch: " + std::to_string(a) + " vs " + std::to_string(b));
  }
}

template <typename P, typename F>
P map_partials(const P& p, F f) {
  P r(p.size());
  for (Index i = 0; i < p.size(); ++i) r(i) = f(p(i));
  return r;
}

template <typename P, typename F>
P zip_partials(const P& p, const P& q, F f) {
  check_width(p.size(), q.size());
  P r(p.size());
  for (Index i = 0; i < p.size(); ++i) r(i) = f(p(i), q(i));
  return r;
}

template <typename P>
P add_partials(const P& p, const P& q) {
  if (p.size() == 0) return q;
  if (q.size() == 0) return p;
  return zip_partials(p, q, [](const auto& u, const auto& v) { return u + v; });
}

template <typename P>
P negate_partials(const P& p) {
  return map_partials(p, [](const auto& u) { return -u; });
}

template <typename P>
P sub_partials(const P& p, const P& q) {
  if (q.size() == 0) return p;
  if (p.size() == 0) return negate_partials(q);
  return zip_partials(p, q, [](const auto& u, const auto& v) { return u - v; });
}

template <typename P, typename T>
P scale_partials(const P& p, const T& a) {
  return map_partials(p, [&a](const auto& u) { return u * a; });
}

// a * p + b * q
template <typename P, typename T>
P combine_partials(const T& a, const P& p, const T& b, const P& q) {
  if (p.size() == 0) return scale_partials(q, b);
  if (q.size() == 0) return scale_partials(p, a);
  return zip_partials(p, q, [&](const auto& u, const auto& v) { return u * a + v * b; });
}

}  // namespace detail

template <typename T>
Dual<T> operator+(const Dual<T>& a, const Dual<T>& b) {
  return {a.value + b.value, detail::add_partials(a.partials, b.partials)};
}
template <typename T, PassiveFor<T> U>
Dual<T> operator+(const Dual<T>& a, const U& b) {
  return {a.value + T(b), a.partials};
}
template <typename T, PassiveFor<T> U>
Dual<T> operator+(const U& a, const Dual<T>& b) {
  return {T(a) + b.value, b.partials};
}

template <typename T>
Dual<T> operator-(const Dual<T>& a) {
  return {-a.value, detail::negate_partials(a.partials)};
}
template <typename T>
Dual<T> operator-(const Dual<T>& a, const Dual<T>& b) {
  return {a.value - b.value, detail::sub_partials(a.partials, b.partials)};
}
template <typename T, PassiveFor<T> U>
Dual<T> operator-(const Dual<T>& a, const U& b) {
  return {a.value - T(b), a.partials};
}
template <typename T, PassiveFor<T> U>
Dual<T> operator-(const U& a, const Dual<T>& b) {
  return {T(a) - b.value, detail::negate_partials(b.partials)};
}

template <typename T>
Dual<T> operator*(const Dual<T>& a, const Dual<T>& b) {
  return {a.value * b.value, detail::combine_partials(b.value, a.partials, a.value, b.partials)};
}
template <typename T, PassiveFor<T> U>
Dual<T> operator*(const Dual<T>& a, const U& b) {
  const T c(b);
  return {a.value * c, detail::scale_partials(a.partials, c)};
}
template <typename T, PassiveFor<T> U>
Dual<T> operator*(const U& a, const Dual<T>& b) {
  const T c(a);
  return {c * b.value, detail::scale_partials(b.partials, c)};
}

template <typename T>
Dual<T> operator/(const Dual<T>& a, const Dual<T>& b) {
  const T inv = T(1.0) / b.value;
  const T q = a.value * inv;
  // (a' - q b') / b
  return {q, detail::combine_partials(inv, a.partials, T(-(q * inv)), b.partials)};
}
template <typename T, PassiveFor<T> U>
Dual<T> operator/(const Dual<T>& a, const U& b) {
  const T c(b);
  return {a.value / c, detail::scale_partials(a.partials, T(T(1.0) / c))};
}
template <typename T, PassiveFor<T> U>
Dual<T> operator/(const U& a, const Dual<T>& b) {
  const T q = T(a) / b.value;
  return {q, detail::scale_partials(b.partials, T(-(q / b.value)))};
}

// Comparisons look only at primal values.
template <typename T>
bool operator<(const Dual<T>& a, const Dual<T>& b) { return primal(a) < primal(b); }
template <typename T>
bool operator>(const Dual<T>& a, const Dual<T>& b) { return primal(a) > primal(b); }
template <typename T>
bool operator<=(const Dual<T>& a, const Dual<T>& b) { return primal(a) <= primal(b); }
template <typename T>
bool operator>=(const Dual<T>& a, const Dual<T>& b) { return primal(a) >= primal(b); }
template <typename T>
bool operator==(const Dual<T>& a, const Dual<T>& b) { return primal(a) == primal(b); }
template <typename T>
bool operator!=(const Dual<T>& a, const Dual<T>& b) { return primal(a) != primal(b); }
template <typename T, PassiveFor<T> U>
bool operator<(const Dual<T>& a, const U& b) { return primal(a) < primal(T(b)); }
template <typename T, PassiveFor<T> U>
bool operator>(const Dual<T>& a, const U& b) { return primal(a) > primal(T(b)); }
template <typename T, PassiveFor<T> U>
bool operator<=(const Dual<T>& a, const U& b) { return primal(a) <= primal(T(b)); }
template <typename T, PassiveFor<T> U>
bool operator>=(const Dual<T>& a, const U& b) { return primal(a) >= primal(T(b)); }
template <typename T, PassiveFor<T> U>
bool operator<(const U& a, const Dual<T>& b) { return primal(T(a)) < primal(b); }
template <typename T, PassiveFor<T> U>
bool operator>(const U& a, const Dual<T>& b) { return primal(T(a)) > primal(b); }

template <typename T>
Dual<T> exp(const Dual<T>& a) {
  using std::exp;
  const T e = exp(a.value);
  return {e, detail::scale_partials(a.partials, e)};
}

template <typename T>
Dual<T> log(const Dual<T>& a) {
  using std::log;
  return {log(a.value), detail::scale_partials(a.partials, T(T(1.0) / a.value))};
}

template <typename T>
Dual<T> sqrt(const Dual<T>& a) {
  using std::sqrt;
  const T s = sqrt(a.value);
  return {s, detail::scale_partials(a.partials, T(T(0.5) / s))};
}

template <typename T>
Dual<T> sin(const Dual<T>& a) {
  using std::cos;
  using std::sin;
  return {sin(a.value), detail::scale_partials(a.partials, T(cos(a.value)))};
}

template <typename T>
Dual<T> cos(const Dual<T>& a) {
  using std::cos;
  using std::sin;
  return {cos(a.value), detail::scale_partials(a.partials, T(-sin(a.value)))};
}

template <typename T>
Dual<T> tanh(const Dual<T>& a) {
  using std::tanh;
  const T t = tanh(a.value);
  return {t, detail::scale_partials(a.partials, T(T(1.0) - t * t))};
}

/// |a| with derivative sign(a); the derivative at exactly zero is zero.
template <typename T>
Dual<T> abs(const Dual<T>& a) {
  using std::abs;
  const double p = primal(a);
  const double sign = p > 0.0 ? 1.0 : (p < 0.0 ? -1.0 : 0.0);
  return {abs(a.value), detail::scale_partials(a.partials, T(sign))};
}

template <typename T>
Dual<T> pow(const Dual<T>& a, double p) {
  using std::pow;
  return {pow(a.value, p), detail::scale_partials(a.partials, T(p * pow(a.value, p - 1.0)))};
}

template <typename T>
Dual<T> pow(const Dual<T>& a, int p) {
  return pow(a, static_cast<double>(p));
}

template <typename T>
Dual<T> pow(const Dual<T>& a, const Dual<T>& b) {
  using std::log;
  using std::pow;
  const T v = pow(a.value, b.value);
  const T da = b.value * pow(a.value, b.value - T(1.0));
  if (b.partials.size() == 0) return {v, detail::scale_partials(a.partials, da)};
  return {v, detail::combine_partials(da, a.partials, T(v * log(a.value)), b.partials)};
}

template <typename T>
Dual<T> pow(double a, const Dual<T>& b) {
  using std::log;
  using std::pow;
  const T v = pow(T(a), b.value);
  return {v, detail::scale_partials(b.partials, T(v * std::log(a)))};
}

template <typename T>
bool isfinite(const Dual<T>& a) {
  return std::isfinite(primal(a));
}

}  // namespace iad

namespace Eigen {

template <typename T>
struct NumTraits<iad::Dual<T>> : NumTraits<double> {
  using Real = iad::Dual<T>;
  using NonInteger = iad::Dual<T>;
  using Nested = iad::Dual<T>;
  using Literal = iad::Dual<T>;

  enum {
    IsComplex = 0,
    IsInteger = 0,
    IsSigned = 1,
    RequireInitialization = 1,
    ReadCost = 1,
    AddCost = 4,
    MulCost = 8,
  };

  static inline Real epsilon() { return Real(std::numeric_limits<double>::epsilon()); }
  static inline Real dummy_precision() { return Real(1e-12); }
  static inline Real highest() { return Real(std::numeric_limits<double>::max()); }
  static inline Real lowest() { return Real(std::numeric_limits<double>::lowest()); }
  static inline int digits10() { return NumTraits<double>::digits10(); }
};

}  // namespace Eigen
