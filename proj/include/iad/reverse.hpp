#pragma once

#include "iad/tape.hpp"

#include <utility>

namespace iad {

struct Recording {
  Eigen::VectorXd outputs;
  Tape tape;
};

/**
 * Evaluate `f` on taped inputs and keep the executed operation sequence.
 * `f` maps VectorX<Var> to VectorX<Var> (or a single Var).
 */
template <typename F>
Recording record(F&& f, const Eigen::VectorXd& x, Index node_limit = Tape::kNoLimit) {
  Recording rec;
  rec.tape.set_node_limit(node_limit);
  {
    TapeActivation activation(rec.tape);
    VectorX<Var> xv(x.size());
    for (Index i = 0; i < x.size(); ++i) xv(i) = rec.tape.input(x(i));
    auto y = f(xv);
    if constexpr (std::is_same_v<std::remove_cvref_t<decltype(y)>, Var>) {
      const Var out[1] = {y};
      rec.tape.set_outputs(out);
    } else {
      const VectorX<Var> yv = y;
      rec.tape.set_outputs(std::span<const Var>(yv.data(), static_cast<std::size_t>(yv.size())));
    }
  }
  rec.outputs = rec.tape.output_values();
  return rec;
}

inline Eigen::VectorXd vjp(Tape& tape, const Eigen::VectorXd& seed) { return tape.vjp(seed); }

/// Gradient of a scalar-valued function by one reverse sweep.
template <typename F>
Eigen::VectorXd gradient(F&& f, const Eigen::VectorXd& x) {
  Recording rec = record(std::forward<F>(f), x);
  require_size(rec.tape.num_outputs(), 1, "gradient output");
  return rec.tape.vjp(Eigen::VectorXd::Ones(1));
}

/**
 * A recorded tape prepared for reuse: new input values are pushed through
 * the same node sequence. Valid only while the recorded function takes the
 * same control path at the new inputs (branch-free functions always do);
 * the caller is responsible for that.
 */
class CompiledTape {
 public:
  CompiledTape() = default;
  explicit CompiledTape(Tape tape) : tape_(std::move(tape)) {}

  Eigen::VectorXd replay(const Eigen::VectorXd& x) {
    tape_.replay(x);
    return tape_.output_values();
  }

  Eigen::VectorXd vjp(const Eigen::VectorXd& seed) { return tape_.vjp(seed); }
  Eigen::MatrixXd vjp_many(const Eigen::MatrixXd& seeds) { return tape_.vjp_many(seeds); }

  const Tape& tape() const { return tape_; }
  Tape& tape() { return tape_; }
  Index num_inputs() const { return tape_.num_inputs(); }
  Index num_outputs() const { return tape_.num_outputs(); }

 private:
  Tape tape_;
};

template <typename F>
CompiledTape compile(F&& f, const Eigen::VectorXd& x) {
  return CompiledTape(record(std::forward<F>(f), x).tape);
}

inline Eigen::VectorXd replay(CompiledTape& ct, const Eigen::VectorXd& x) { return ct.replay(x); }

}  // namespace iad
