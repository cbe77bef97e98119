#include "iad/tape.hpp"

#include <algorithm>

namespace iad {

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape* Tape::active() { return g_active_tape; }

TapeActivation::TapeActivation(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }

TapeActivation::~TapeActivation() { g_active_tape = previous_; }

void Tape::check_limit(Index extra) const {
  if (size() + extra > node_limit_) {
    throw TapeLimitError("tape node limit of " + std::to_string(node_limit_) + " exceeded");
  }
}

std::int32_t Tape::push(Op op, std::int32_t lhs, std::int32_t rhs, double constant, const LocalEval& e) {
  check_limit(1);
  const auto index = static_cast<std::int32_t>(ops_.size());
  ops_.push_back(op);
  lhs_.push_back(lhs);
  rhs_.push_back(rhs);
  constants_.push_back(constant);
  values_.push_back(e.value);
  dlhs_.push_back(e.dlhs);
  drhs_.push_back(e.drhs);
  return index;
}

Var Tape::input(double value) {
  const std::int32_t index = push(Op::Input, -1, -1, 0.0, {value, 0.0, 0.0});
  inputs_.push_back(index);
  return Var(value, index);
}

void Tape::set_outputs(std::span<const Var> outputs) {
  outputs_.clear();
  outputs_.reserve(outputs.size());
  for (const Var& v : outputs) {
    if (v.is_active()) {
      outputs_.push_back(v.index());
    } else {
      outputs_.push_back(push(Op::Constant, -1, -1, v.value(), {v.value(), 0.0, 0.0}));
    }
  }
}

std::vector<Var> Tape::push_block(std::shared_ptr<BlockRule> rule, std::span<const Var> inputs,
                                  std::span<const double> outputs) {
  check_limit(static_cast<Index>(outputs.size()));
  Block block;
  block.rule = std::move(rule);
  block.inputs.reserve(inputs.size());
  block.passive_values.reserve(inputs.size());
  for (const Var& v : inputs) {
    block.inputs.push_back(v.is_active() ? v.index() : -1);
    block.passive_values.push_back(v.value());
  }
  block.first_output = static_cast<std::int32_t>(ops_.size());
  block.num_outputs = static_cast<std::int32_t>(outputs.size());
  const auto id = static_cast<std::int32_t>(blocks_.size());
  blocks_.push_back(std::move(block));

  std::vector<Var> result;
  result.reserve(outputs.size());
  for (std::size_t k = 0; k < outputs.size(); ++k) {
    const std::int32_t index =
        push(Op::BlockOutput, id, static_cast<std::int32_t>(k), 0.0, {outputs[k], 0.0, 0.0});
    result.emplace_back(outputs[k], index);
  }
  return result;
}

Index Tape::arithmetic_size() const {
  return static_cast<Index>(std::count_if(ops_.begin(), ops_.end(), [](Op op) {
    return op != Op::Input && op != Op::Constant;
  }));
}

std::size_t Tape::memory_bytes() const {
  std::size_t bytes = ops_.capacity() * sizeof(Op) + (lhs_.capacity() + rhs_.capacity()) * sizeof(std::int32_t) +
                      (constants_.capacity() + values_.capacity() + dlhs_.capacity() + drhs_.capacity() +
                       adjoint_.capacity()) *
                          sizeof(double) +
                      (inputs_.capacity() + outputs_.capacity()) * sizeof(std::int32_t);
  for (const Block& b : blocks_) {
    bytes += sizeof(Block) + b.inputs.capacity() * sizeof(std::int32_t) + b.passive_values.capacity() * sizeof(double);
  }
  return bytes;
}

Eigen::VectorXd Tape::output_values() const {
  Eigen::VectorXd out(num_outputs());
  for (Index j = 0; j < num_outputs(); ++j) out(j) = values_[outputs_[j]];
  return out;
}

void Tape::reverse_pass() {
  for (auto i = static_cast<std::int32_t>(ops_.size()) - 1; i >= 0; --i) {
    const Op op = ops_[i];
    if (op == Op::BlockOutput) {
      if (rhs_[i] != 0) continue;
      // First output of the block: every output adjoint is final here.
      Block& block = blocks_[lhs_[i]];
      std::span<const double> ybar(adjoint_.data() + block.first_output, block.num_outputs);
      if (std::all_of(ybar.begin(), ybar.end(), [](double g) { return g == 0.0; })) continue;
      std::vector<double> xbar(block.inputs.size(), 0.0);
      block.rule->pullback(ybar, xbar);
      for (std::size_t k = 0; k < block.inputs.size(); ++k) {
        if (block.inputs[k] >= 0) adjoint_[block.inputs[k]] += xbar[k];
      }
      continue;
    }
    const double g = adjoint_[i];
    if (g == 0.0 || op == Op::Input || op == Op::Constant) continue;
    adjoint_[lhs_[i]] += dlhs_[i] * g;
    if (rhs_[i] >= 0) adjoint_[rhs_[i]] += drhs_[i] * g;
  }
}

Eigen::VectorXd Tape::sweep(std::span<const std::pair<std::int32_t, double>> seeds) {
  adjoint_.assign(ops_.size(), 0.0);
  for (const auto& [index, g] : seeds) adjoint_[index] += g;
  reverse_pass();
  Eigen::VectorXd xbar(num_inputs());
  for (Index k = 0; k < num_inputs(); ++k) xbar(k) = adjoint_[inputs_[k]];
  return xbar;
}

Eigen::VectorXd Tape::vjp(const Eigen::VectorXd& seed) {
  require_size(seed.size(), num_outputs(), "vjp seed");
  adjoint_.assign(ops_.size(), 0.0);
  for (Index j = 0; j < num_outputs(); ++j) adjoint_[outputs_[j]] += seed(j);
  reverse_pass();
  Eigen::VectorXd xbar(num_inputs());
  for (Index k = 0; k < num_inputs(); ++k) xbar(k) = adjoint_[inputs_[k]];
  return xbar;
}

Eigen::MatrixXd Tape::vjp_many(const Eigen::MatrixXd& seeds) {
  require_size(seeds.rows(), num_outputs(), "vjp seed rows");
  const Index k = seeds.cols();
  // Column i holds the k adjoints of node i.
  Eigen::MatrixXd adj = Eigen::MatrixXd::Zero(k, size());
  for (Index j = 0; j < num_outputs(); ++j) adj.col(outputs_[j]) += seeds.row(j).transpose();
  Eigen::MatrixXd ybar;
  Eigen::MatrixXd xbar;
  for (auto i = static_cast<std::int32_t>(ops_.size()) - 1; i >= 0; --i) {
    const Op op = ops_[i];
    if (op == Op::Input || op == Op::Constant) continue;
    if (op == Op::BlockOutput) {
      if (rhs_[i] != 0) continue;
      Block& block = blocks_[lhs_[i]];
      ybar = adj.middleCols(block.first_output, block.num_outputs).transpose();
      if (ybar.isZero(0.0)) continue;
      xbar = Eigen::MatrixXd::Zero(static_cast<Index>(block.inputs.size()), k);
      block.rule->pullback_many(ybar, xbar);
      for (std::size_t m = 0; m < block.inputs.size(); ++m) {
        if (block.inputs[m] >= 0) adj.col(block.inputs[m]) += xbar.row(static_cast<Index>(m)).transpose();
      }
      continue;
    }
    adj.col(lhs_[i]) += dlhs_[i] * adj.col(i);
    if (rhs_[i] >= 0) adj.col(rhs_[i]) += drhs_[i] * adj.col(i);
  }
  Eigen::MatrixXd out(num_inputs(), k);
  for (Index m = 0; m < num_inputs(); ++m) out.row(m) = adj.col(inputs_[m]).transpose();
  return out;
}

void Tape::replay(const Eigen::VectorXd& x) {
  require_size(x.size(), num_inputs(), "replay input");
  for (Index k = 0; k < num_inputs(); ++k) values_[inputs_[k]] = x(k);
  const auto n = static_cast<std::int32_t>(ops_.size());
  std::vector<double> bx;
  std::vector<double> by;
  for (std::int32_t i = 0; i < n; ++i) {
    const Op op = ops_[i];
    switch (op) {
      case Op::Input:
      case Op::Constant:
        break;
      case Op::BlockOutput: {
        if (rhs_[i] != 0) break;
        Block& block = blocks_[lhs_[i]];
        bx.resize(block.inputs.size());
        for (std::size_t k = 0; k < block.inputs.size(); ++k) {
          bx[k] = block.inputs[k] >= 0 ? values_[block.inputs[k]] : block.passive_values[k];
        }
        by.assign(block.num_outputs, 0.0);
        block.rule->forward(bx, by);
        std::copy(by.begin(), by.end(), values_.begin() + block.first_output);
        break;
      }
      default: {
        const double a = values_[lhs_[i]];
        const double b = rhs_[i] >= 0 ? values_[rhs_[i]] : 0.0;
        const LocalEval e = evaluate_op(op, a, b, constants_[i]);
        values_[i] = e.value;
        dlhs_[i] = e.dlhs;
        drhs_[i] = e.drhs;
      }
    }
  }
}

void Tape::reserve(Index nodes) {
  const auto n = static_cast<std::size_t>(nodes);
  ops_.reserve(n);
  lhs_.reserve(n);
  rhs_.reserve(n);
  constants_.reserve(n);
  values_.reserve(n);
  dlhs_.reserve(n);
  drhs_.reserve(n);
}

void Tape::clear() {
  ops_.clear();
  lhs_.clear();
  rhs_.clear();
  constants_.clear();
  values_.clear();
  dlhs_.clear();
  drhs_.clear();
  inputs_.clear();
  outputs_.clear();
  blocks_.clear();
  adjoint_.clear();
}

}  // namespace iad
