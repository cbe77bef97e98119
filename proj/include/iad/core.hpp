#pragma once

#include <Eigen/Core>

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>

namespace iad {

using Index = Eigen::Index;

template <typename S>
using VectorX = Eigen::Matrix<S, Eigen::Dynamic, 1>;

template <typename S>
using MatrixX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

/// Base of every error thrown by the library. Errors raised inside a
/// time-stepping loop carry the index of the failing step.
class Error : public std::exception {
 public:
  explicit Error(std::string message) : message_(std::move(message)) {}

  const char* what() const noexcept override { return message_.c_str(); }

  std::optional<Index> step() const { return step_; }

  void set_step(Index step) {
    if (!step_) message_ = "step " + std::to_string(step) + ": " + message_;
    step_ = step;
  }

 private:
  std::string message_;
  std::optional<Index> step_;
};

class DimensionError : public Error {
  using Error::Error;
};

class SingularMatrixError : public Error {
  using Error::Error;
};

class SingularJacobianError : public SingularMatrixError {
  using SingularMatrixError::SingularMatrixError;
};

/// Iterative solve hit its iteration limit without converging.
class ConvergenceError : public Error {
  using Error::Error;
};

class LineSearchStallError : public Error {
  using Error::Error;
};

class NonFiniteError : public Error {
  using Error::Error;
};

class TapeError : public Error {
  using Error::Error;
};

/// Recording exceeded the tape's configured node limit.
class TapeLimitError : public TapeError {
  using TapeError::TapeError;
};

inline void require_size(Index actual, Index expected, const char* what) {
  if (actual != expected) {
    throw DimensionError(std::string(what) + ": expected size " + std::to_string(expected) +
                         ", got " + std::to_string(actual));
  }
}

/// Primal value of a scalar; AD types overload this so that generic code can
/// branch and measure convergence on plain doubles.
inline double primal(double x) { return x; }

template <typename Derived>
double primal_inf_norm(const Eigen::MatrixBase<Derived>& v) {
  double m = 0.0;
  for (Index i = 0; i < v.size(); ++i) m = std::max(m, std::abs(primal(v(i))));
  return m;
}

template <typename Derived>
double primal_squared_norm(const Eigen::MatrixBase<Derived>& v) {
  double s = 0.0;
  for (Index i = 0; i < v.size(); ++i) {
    const double p = primal(v(i));
    s += p * p;
  }
  return s;
}

template <typename Derived>
Eigen::VectorXd primal_values(const Eigen::MatrixBase<Derived>& v) {
  Eigen::VectorXd out(v.size());
  for (Index i = 0; i < v.size(); ++i) out(i) = primal(v(i));
  return out;
}

}  // namespace iad
