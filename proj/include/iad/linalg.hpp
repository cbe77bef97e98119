#pragma once

#include "iad/core.hpp"

#include <Eigen/LU>

#include <cmath>
#include <type_traits>
#include <vector>

namespace iad {

/**
 * Dense LU factorization with partial pivoting, PA = LU, for any scalar type
 * that supports the field operations. Pivots are chosen on primal values,
 * so the same code factors plain doubles and AD-typed matrices alike.
 *
 * A pivot smaller than `singular_rtol` times the largest absolute entry of
 * A raises SingularMatrixError.
 */
template <typename S>
class DenseLU {
 public:
  static constexpr double kDefaultSingularTolerance = 1e-14;

  DenseLU() = default;

  explicit DenseLU(MatrixX<S> a, double singular_rtol = kDefaultSingularTolerance) : lu_(std::move(a)) {
    if (lu_.rows() != lu_.cols()) {
      throw DimensionError("LU of a non-square " + std::to_string(lu_.rows()) + "x" + std::to_string(lu_.cols()) +
                           " matrix");
    }
    factor(singular_rtol);
  }

  Index size() const { return lu_.rows(); }
  const MatrixX<S>& packed() const { return lu_; }
  const std::vector<Index>& permutation() const { return perm_; }

  template <typename Derived>
  MatrixX<S> solve(const Eigen::MatrixBase<Derived>& b) const {
    require_size(b.rows(), size(), "LU solve right-hand side");
    const Index n = size();
    MatrixX<S> x(n, b.cols());
    for (Index i = 0; i < n; ++i) x.row(i) = b.row(perm_[i]);
    if constexpr (std::is_same_v<S, double>) {
      if (x.cols() == 1) {
        Eigen::Ref<Eigen::VectorXd> v = x.col(0);
        lu_.template triangularView<Eigen::UnitLower>().solveInPlace(v);
        lu_.template triangularView<Eigen::Upper>().solveInPlace(v);
      } else {
        lu_.template triangularView<Eigen::UnitLower>().solveInPlace(x);
        lu_.template triangularView<Eigen::Upper>().solveInPlace(x);
      }
      return x;
    }
    // L y = P b, unit diagonal.
    for (Index k = 0; k + 1 < n; ++k) {
      x.bottomRows(n - k - 1).noalias() -= lu_.col(k).tail(n - k - 1) * x.row(k);
    }
    // U x = y.
    for (Index k = n - 1; k >= 0; --k) {
      x.row(k) /= lu_(k, k);
      if (k > 0) x.topRows(k).noalias() -= lu_.col(k).head(k) * x.row(k);
    }
    return x;
  }

  VectorX<S> solve(const VectorX<S>& b) const {
    const MatrixX<S> m = b;
    return solve(m).col(0);
  }

  /// Solve A^T x = b.
  template <typename Derived>
  MatrixX<S> solve_transposed(const Eigen::MatrixBase<Derived>& b) const {
    require_size(b.rows(), size(), "LU transposed solve right-hand side");
    const Index n = size();
    MatrixX<S> z = b;
    if constexpr (std::is_same_v<S, double>) {
      if (z.cols() == 1) {
        Eigen::Ref<Eigen::VectorXd> v = z.col(0);
        lu_.transpose().template triangularView<Eigen::Lower>().solveInPlace(v);
        lu_.transpose().template triangularView<Eigen::UnitUpper>().solveInPlace(v);
      } else {
        lu_.transpose().template triangularView<Eigen::Lower>().solveInPlace(z);
        lu_.transpose().template triangularView<Eigen::UnitUpper>().solveInPlace(z);
      }
    } else {
    // U^T w = b: forward substitution with the upper factor read by columns.
    for (Index k = 0; k < n; ++k) {
      if (k > 0) z.row(k).noalias() -= lu_.col(k).head(k).transpose() * z.topRows(k);
      z.row(k) /= lu_(k, k);
    }
    // L^T v = w: backward substitution, unit diagonal.
    for (Index k = n - 2; k >= 0; --k) {
      z.row(k).noalias() -= lu_.col(k).tail(n - k - 1).transpose() * z.bottomRows(n - k - 1);
    }
    }
    MatrixX<S> x(n, b.cols());
    for (Index i = 0; i < n; ++i) x.row(perm_[i]) = z.row(i);
    return x;
  }

  VectorX<S> solve_transposed(const VectorX<S>& b) const {
    const MatrixX<S> m = b;
    return solve_transposed(m).col(0);
  }

 private:
  void factor(double singular_rtol) {
    const Index n = lu_.rows();
    perm_.resize(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) perm_[i] = i;
    double scale = 0.0;
    for (Index j = 0; j < n; ++j)
      for (Index i = 0; i < n; ++i) scale = std::max(scale, std::abs(primal(lu_(i, j))));
    if (n > 0 && !(scale > 0.0)) throw SingularMatrixError("LU of a zero or non-finite matrix");
    const double threshold = singular_rtol * scale;

    if constexpr (std::is_same_v<S, double>) {
      // Blocked factorization; same pivot rule, singularity checked on U afterwards.
      const Eigen::PartialPivLU<Eigen::MatrixXd> plu(lu_);
      lu_ = plu.matrixLU();
      const auto& rows = plu.permutationP().indices();
      for (Index i = 0; i < n; ++i) perm_[static_cast<std::size_t>(rows(i))] = i;
      for (Index k = 0; k < n; ++k) {
        const double pivot = std::abs(lu_(k, k));
        if (!(pivot > threshold)) {
          throw SingularMatrixError("LU pivot " + std::to_string(pivot) + " below " + std::to_string(threshold) +
                                    " at column " + std::to_string(k));
        }
      }
      return;
    }

    for (Index k = 0; k < n; ++k) {
      Index p = k;
      double best = std::abs(primal(lu_(k, k)));
      for (Index i = k + 1; i < n; ++i) {
        const double v = std::abs(primal(lu_(i, k)));
        if (v > best) {
          best = v;
          p = i;
        }
      }
      if (!(best > threshold)) {
        throw SingularMatrixError("LU pivot " + std::to_string(best) + " below " + std::to_string(threshold) +
                                  " at column " + std::to_string(k));
      }
      if (p != k) {
        lu_.row(k).swap(lu_.row(p));
        std::swap(perm_[k], perm_[p]);
      }
      const Index m = n - k - 1;
      if (m == 0) continue;
      const S inv = S(1.0) / lu_(k, k);
      lu_.col(k).tail(m) *= inv;
      lu_.bottomRightCorner(m, m).noalias() -= lu_.col(k).tail(m) * lu_.row(k).tail(m);
    }
  }

  MatrixX<S> lu_;
  std::vector<Index> perm_;
};

/// Solve A X = B with partial pivoting.
template <typename S, typename Derived>
MatrixX<S> lu_solve(const MatrixX<S>& a, const Eigen::MatrixBase<Derived>& b) {
  return DenseLU<S>(a).solve(b);
}

template <typename S>
VectorX<S> lu_solve(const MatrixX<S>& a, const VectorX<S>& b) {
  return DenseLU<S>(a).solve(b);
}

}  // namespace iad
