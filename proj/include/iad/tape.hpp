#pragma once

#include "iad/core.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <vector>

namespace iad {

enum class Op : std::uint8_t {
  Input,
  Constant,
  Add,
  Sub,
  Mul,
  Div,
  Neg,
  AddConst,
  MulConst,
  ConstSub,    // c - a
  DivByConst,  // a / c
  ConstDiv,    // c / a
  PowConst,    // a ^ c
  ConstPow,    // c ^ a
  Pow,
  Exp,
  Log,
  Sqrt,
  Sin,
  Cos,
  Tanh,
  Abs,
  BlockOutput,
};

/// Value and local partials of one elementary operation. The same routine
/// serves recording and replay, so replay at the recording point is
/// bit-identical.
struct LocalEval {
  double value;
  double dlhs;
  double drhs;
};

inline LocalEval evaluate_op(Op op, double a, double b, double c) {
  switch (op) {
    case Op::Add:
      return {a + b, 1.0, 1.0};
    case Op::Sub:
      return {a - b, 1.0, -1.0};
    case Op::Mul:
      return {a * b, b, a};
    case Op::Div: {
      const double q = a / b;
      return {q, 1.0 / b, -q / b};
    }
    case Op::Neg:
      return {-a, -1.0, 0.0};
    case Op::AddConst:
      return {a + c, 1.0, 0.0};
    case Op::MulConst:
      return {a * c, c, 0.0};
    case Op::ConstSub:
      return {c - a, -1.0, 0.0};
    case Op::DivByConst:
      return {a / c, 1.0 / c, 0.0};
    case Op::ConstDiv: {
      const double q = c / a;
      return {q, -q / a, 0.0};
    }
    case Op::PowConst:
      return {std::pow(a, c), c * std::pow(a, c - 1.0), 0.0};
    case Op::ConstPow: {
      const double v = std::pow(c, a);
      return {v, v * std::log(c), 0.0};
    }
    case Op::Pow: {
      const double v = std::pow(a, b);
      return {v, b * std::pow(a, b - 1.0), v * std::log(a)};
    }
    case Op::Exp: {
      const double e = std::exp(a);
      return {e, e, 0.0};
    }
    case Op::Log:
      return {std::log(a), 1.0 / a, 0.0};
    case Op::Sqrt: {
      const double s = std::sqrt(a);
      return {s, 0.5 / s, 0.0};
    }
    case Op::Sin:
      return {std::sin(a), std::cos(a), 0.0};
    case Op::Cos:
      return {std::cos(a), -std::sin(a), 0.0};
    case Op::Tanh: {
      const double t = std::tanh(a);
      return {t, 1.0 - t * t, 0.0};
    }
    case Op::Abs:
      return {std::abs(a), a > 0.0 ? 1.0 : (a < 0.0 ? -1.0 : 0.0), 0.0};
    case Op::Input:
    case Op::Constant:
    case Op::BlockOutput:
      break;
  }
  return {c, 0.0, 0.0};
}

/// A differentiable operation with many inputs and outputs that appears on a
/// tape as one node group: solver rules, external functions, linear solves.
class BlockRule {
 public:
  virtual ~BlockRule() = default;
  /// Recompute outputs from new inputs; called on replay.
  virtual void forward(std::span<const double> x, std::span<double> y) = 0;
  /// Accumulate ybar^T dy/dx into xbar.
  virtual void pullback(std::span<const double> ybar, std::span<double> xbar) = 0;
  /// Column-wise pullback of several seeds; xbar is accumulated into.
  virtual void pullback_many(const Eigen::MatrixXd& ybar, Eigen::MatrixXd& xbar) {
    std::vector<double> col(static_cast<std::size_t>(xbar.rows()));
    for (Index c = 0; c < ybar.cols(); ++c) {
      std::fill(col.begin(), col.end(), 0.0);
      pullback(std::span<const double>(ybar.col(c).data(), static_cast<std::size_t>(ybar.rows())), col);
      xbar.col(c) += Eigen::Map<const Eigen::VectorXd>(col.data(), xbar.rows());
    }
  }
};

class Var;

/**
 * Append-only operation record for reverse mode.
 *
 * Nodes are stored as parallel arrays. Each node keeps its primal value and
 * the local partials with respect to its (at most two) operands, so a
 * reverse sweep never re-executes primal code. Operand indices always
 * precede the node that uses them.
 *
 * One sweep at a time per tape: the adjoint buffer is owned by the tape.
 */
class Tape {
 public:
  static constexpr Index kNoLimit = std::numeric_limits<std::int32_t>::max();

  Tape() = default;

  /// Tape that receives operations on Var from the current thread.
  static Tape* active();

  Var input(double value);

  /// Declare the dependent variables. Passive outputs become constant nodes.
  void set_outputs(std::span<const Var> outputs);

  Index size() const { return static_cast<Index>(ops_.size()); }
  Index num_inputs() const { return static_cast<Index>(inputs_.size()); }
  Index num_outputs() const { return static_cast<Index>(outputs_.size()); }
  /// Nodes excluding inputs and constants.
  Index arithmetic_size() const;
  std::size_t memory_bytes() const;

  const std::vector<std::int32_t>& input_slots() const { return inputs_; }
  const std::vector<std::int32_t>& output_slots() const { return outputs_; }

  Eigen::VectorXd output_values() const;

  /// seed^T (d outputs / d inputs) in one reverse sweep.
  Eigen::VectorXd vjp(const Eigen::VectorXd& seed);

  /// One reverse sweep carrying every column of `seeds` (outputs by k);
  /// returns inputs by k.
  Eigen::MatrixXd vjp_many(const Eigen::MatrixXd& seeds);

  /// Reverse sweep seeded directly on node adjoints; returns input adjoints.
  /// The seed pairs are (node index, adjoint).
  Eigen::VectorXd sweep(std::span<const std::pair<std::int32_t, double>> seeds);

  /// Re-execute the recorded node sequence at new input values.
  void replay(const Eigen::VectorXd& x);

  void set_node_limit(Index limit) { node_limit_ = limit; }
  Index node_limit() const { return node_limit_; }

  void reserve(Index nodes);
  void clear();

  // Recording interface used by Var and rule implementations.
  std::int32_t push(Op op, std::int32_t lhs, std::int32_t rhs, double constant, const LocalEval& e);
  std::vector<Var> push_block(std::shared_ptr<BlockRule> rule, std::span<const Var> inputs,
                              std::span<const double> outputs);

 private:
  struct Block {
    std::shared_ptr<BlockRule> rule;
    std::vector<std::int32_t> inputs;  // -1 for passive inputs
    std::vector<double> passive_values;
    std::int32_t first_output = 0;
    std::int32_t num_outputs = 0;
  };

  void reverse_pass();
  void check_limit(Index extra) const;

  std::vector<Op> ops_;
  std::vector<std::int32_t> lhs_;
  std::vector<std::int32_t> rhs_;
  std::vector<double> constants_;
  std::vector<double> values_;
  std::vector<double> dlhs_;
  std::vector<double> drhs_;
  std::vector<std::int32_t> inputs_;
  std::vector<std::int32_t> outputs_;
  std::vector<Block> blocks_;
  std::vector<double> adjoint_;
  Index node_limit_ = kNoLimit;
};

/// Routes Var operations on this thread to `tape` for the guard's lifetime.
class TapeActivation {
 public:
  explicit TapeActivation(Tape& tape);
  ~TapeActivation();
  TapeActivation(const TapeActivation&) = delete;
  TapeActivation& operator=(const TapeActivation&) = delete;

 private:
  Tape* previous_;
};

/// Taped scalar. A Var with no tape index is a passive constant; operations
/// touching only passive operands are not recorded.
class Var {
 public:
  Var() = default;
  Var(double v) : value_(v) {}  // NOLINT: constants convert implicitly
  Var(double v, std::int32_t index) : value_(v), index_(index) {}

  double value() const { return value_; }
  std::int32_t index() const { return index_; }
  bool is_active() const { return index_ >= 0; }

  Var& operator+=(const Var& o);
  Var& operator-=(const Var& o);
  Var& operator*=(const Var& o);
  Var& operator/=(const Var& o);

 private:
  double value_ = 0.0;
  std::int32_t index_ = -1;
};

inline double primal(const Var& v) { return v.value(); }

namespace detail {

inline Tape& require_tape() {
  Tape* t = Tape::active();
  if (t == nullptr) throw TapeError("operation on an active Var with no active tape");
  return *t;
}

inline Var record_unary(Op op, const Var& a, double c = 0.0) {
  const LocalEval e = evaluate_op(op, a.value(), 0.0, c);
  if (!a.is_active()) return Var(e.value);
  return Var(e.value, require_tape().push(op, a.index(), -1, c, e));
}

inline Var record_binary(Op op, const Var& a, const Var& b) {
  const LocalEval e = evaluate_op(op, a.value(), b.value(), 0.0);
  if (!a.is_active() && !b.is_active()) return Var(e.value);
  if (a.is_active() && b.is_active()) return Var(e.value, require_tape().push(op, a.index(), b.index(), 0.0, e));
  // One passive operand: record the constant-operand form of the op.
  const bool left = a.is_active();
  const Var& act = left ? a : b;
  const double c = left ? b.value() : a.value();
  switch (op) {
    case Op::Add:
      return record_unary(Op::AddConst, act, c);
    case Op::Mul:
      return record_unary(Op::MulConst, act, c);
    case Op::Sub:
      return left ? record_unary(Op::AddConst, act, -c) : record_unary(Op::ConstSub, act, c);
    case Op::Div:
      return left ? record_unary(Op::DivByConst, act, c) : record_unary(Op::ConstDiv, act, c);
    case Op::Pow:
      return left ? record_unary(Op::PowConst, act, c) : record_unary(Op::ConstPow, act, c);
    default:
      break;
  }
  throw TapeError("unsupported binary op");
}

}  // namespace detail

inline Var operator+(const Var& a, const Var& b) { return detail::record_binary(Op::Add, a, b); }
inline Var operator-(const Var& a, const Var& b) { return detail::record_binary(Op::Sub, a, b); }
inline Var operator*(const Var& a, const Var& b) { return detail::record_binary(Op::Mul, a, b); }
inline Var operator/(const Var& a, const Var& b) { return detail::record_binary(Op::Div, a, b); }
inline Var operator-(const Var& a) { return detail::record_unary(Op::Neg, a); }

inline Var operator+(const Var& a, double b) { return a + Var(b); }
inline Var operator+(double a, const Var& b) { return Var(a) + b; }
inline Var operator-(const Var& a, double b) { return a - Var(b); }
inline Var operator-(double a, const Var& b) { return Var(a) - b; }
inline Var operator*(const Var& a, double b) { return a * Var(b); }
inline Var operator*(double a, const Var& b) { return Var(a) * b; }
inline Var operator/(const Var& a, double b) { return a / Var(b); }
inline Var operator/(double a, const Var& b) { return Var(a) / b; }

inline Var& Var::operator+=(const Var& o) { return *this = *this + o; }
inline Var& Var::operator-=(const Var& o) { return *this = *this - o; }
inline Var& Var::operator*=(const Var& o) { return *this = *this * o; }
inline Var& Var::operator/=(const Var& o) { return *this = *this / o; }

inline bool operator<(const Var& a, const Var& b) { return a.value() < b.value(); }
inline bool operator>(const Var& a, const Var& b) { return a.value() > b.value(); }
inline bool operator<=(const Var& a, const Var& b) { return a.value() <= b.value(); }
inline bool operator>=(const Var& a, const Var& b) { return a.value() >= b.value(); }
inline bool operator==(const Var& a, const Var& b) { return a.value() == b.value(); }
inline bool operator!=(const Var& a, const Var& b) { return a.value() != b.value(); }

inline Var exp(const Var& a) { return detail::record_unary(Op::Exp, a); }
inline Var log(const Var& a) { return detail::record_unary(Op::Log, a); }
inline Var sqrt(const Var& a) { return detail::record_unary(Op::Sqrt, a); }
inline Var sin(const Var& a) { return detail::record_unary(Op::Sin, a); }
inline Var cos(const Var& a) { return detail::record_unary(Op::Cos, a); }
inline Var tanh(const Var& a) { return detail::record_unary(Op::Tanh, a); }
/// Derivative sign(a), zero at a == 0.
inline Var abs(const Var& a) { return detail::record_unary(Op::Abs, a); }
inline Var pow(const Var& a, double p) { return detail::record_unary(Op::PowConst, a, p); }
inline Var pow(const Var& a, int p) { return pow(a, static_cast<double>(p)); }
inline Var pow(double a, const Var& b) { return detail::record_binary(Op::Pow, Var(a), b); }
inline Var pow(const Var& a, const Var& b) { return detail::record_binary(Op::Pow, a, b); }
inline bool isfinite(const Var& a) { return std::isfinite(a.value()); }

}  // namespace iad

namespace Eigen {

template <>
struct NumTraits<iad::Var> : NumTraits<double> {
  using Real = iad::Var;
  using NonInteger = iad::Var;
  using Nested = iad::Var;
  using Literal = iad::Var;

  enum {
    IsComplex = 0,
    IsInteger = 0,
    IsSigned = 1,
    RequireInitialization = 1,
    ReadCost = 1,
    AddCost = 4,
    MulCost = 4,
  };

  static inline Real epsilon() { return Real(std::numeric_limits<double>::epsilon()); }
  static inline Real dummy_precision() { return Real(1e-12); }
  static inline Real highest() { return Real(std::numeric_limits<double>::max()); }
  static inline Real lowest() { return Real(std::numeric_limits<double>::lowest()); }
  static inline int digits10() { return NumTraits<double>::digits10(); }
};

}  // namespace Eigen
