#pragma once

#include "iad/core.hpp"

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace iad::bench {

enum class Case { Rosenbrock, HeatImplicit, HeatExplicit };

std::string case_name(Case c);
std::optional<Case> parse_case(const std::string& name);

/// Strategy names accepted for a case, in reporting order.
std::vector<std::string> strategies_for(Case c);

/// Strategy whose derivatives the others are compared against.
std::string reference_strategy(Case c);

/// One CSV row. Optional fields are written as empty cells.
struct BenchRecord {
  std::string case_id;
  std::string strategy;
  Index n = 0;
  Index states = 0;
  Index inputs = 0;
  Index outputs = 0;
  std::optional<double> median_seconds;
  std::optional<double> max_rel_err;
  std::optional<Index> tape_nodes;
  std::optional<Index> solver_iters;
  /// Timing is (inputs + 1) single primal runs rather than a measured FD gradient.
  bool estimated = false;
  /// Samples actually timed.
  int samples = 0;
  /// Derivative matrix rows-by-inputs; kept only when requested.
  std::optional<Eigen::MatrixXd> derivative;
  /// Primal output(s) produced along the strategy's own code path.
  Eigen::VectorXd output;
  /// Largest deviation of `output` from the plain double run.
  std::optional<double> output_err;
  /// Empty when the strategy ran; otherwise why it did not.
  std::string error;
};

struct RunOptions {
  std::vector<Index> sizes;
  /// Empty means every strategy of the case.
  std::vector<std::string> strategies;
  int samples = 100;
  /// Time steps for the heat cases; 0 selects 100 (implicit) or 1000 (explicit).
  Index steps = 0;
  /// Estimate FD timing from one primal run instead of running it.
  bool fd_estimate = false;
  unsigned seed = 0;
  /// Tape cap for whole-computation reverse strategies; exceeding it skips the strategy.
  Index max_tape_nodes = 40'000'000;
  /// Stop sampling a strategy once this much time was spent (0 = no limit). At least one sample is taken.
  double max_seconds = 0.0;
  /// Run sizes concurrently; timings are not recorded.
  bool parallel = false;
  /// Skip derivative reference comparisons when the reference has more than this many inputs.
  Index max_reference_inputs = 20'000;
  /// Keep the derivative matrices in the records.
  bool keep_derivatives = false;
};

/// Thrown for invalid strategy/case combinations and bad options (CLI exit code 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

std::vector<BenchRecord> run_rosenbrock(const RunOptions& opts);
std::vector<BenchRecord> run_heat_implicit(const RunOptions& opts);
std::vector<BenchRecord> run_heat_explicit(const RunOptions& opts);
std::vector<BenchRecord> run_case(Case c, const RunOptions& opts);

inline constexpr const char* kCsvHeader =
    "case,strategy,n,states,inputs,outputs,median_seconds,max_rel_err,tape_nodes,solver_iters";

void write_csv(std::ostream& out, const std::vector<BenchRecord>& records);
void write_csv(const std::string& path, const std::vector<BenchRecord>& records);

/// Max error relative to the largest reference entry, absolute when that is below 1e-8.
double relative_error(const Eigen::MatrixXd& a, const Eigen::MatrixXd& ref);

struct CheckTolerances {
  double ad = 1e-8;
  /// Used instead of `ad` when the reference is numerically zero.
  double ad_zero = 1e-10;
  double fd = 1e-4;
  /// Kelvin, for the heat cases.
  double output = 1e-2;
};

struct CheckReport {
  bool pass = true;
  std::vector<BenchRecord> records;
  std::vector<std::string> lines;
};

/// Every strategy of the case at one size, compared against the reference.
CheckReport check(Case c, Index size, Index steps = 0, const CheckTolerances& tol = {}, unsigned seed = 0);

}  // namespace iad::bench
