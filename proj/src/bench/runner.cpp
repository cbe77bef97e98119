#include "iad/bench/runner.hpp"

#include "iad/bench/problems.hpp"
#include "iad/fixed_dual.hpp"
#include "iad/implicit.hpp"
#include "iad/newton.hpp"
#include "iad/ode.hpp"
#include "iad/reverse.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <future>
#include <iomanip>
#include <map>
#include <new>
#include <random>
#include <sstream>

namespace iad::bench {

namespace {

using Clock = std::chrono::steady_clock;

// Forward passes through generic code use this many partials per chunk.
constexpr int kChunk = 4;

struct Outcome {
  Eigen::MatrixXd derivative;
  Eigen::VectorXd output;
  std::optional<Index> tape_nodes;
  std::optional<Index> solver_iters;
};

struct Strategy {
  std::string name;
  std::function<Outcome()> run;
  bool finite_difference = false;
};

/// Everything the generic driver needs for one case at one size.
struct Setup {
  Case kind;
  Index n = 0;
  Index states = 0;
  Index inputs = 0;
  Index outputs = 0;
  Eigen::VectorXd primal_output;
  std::function<void()> primal_run;
  std::vector<Strategy> strategies;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

/// Rows of the output Jacobian by reverse sweeps, batching seeds while the
/// k-wide adjoint array stays under 64 MB.
Eigen::MatrixXd unit_rows_jacobian(Tape& tape, Index rows) {
  constexpr Index kAdjointBudget = Index{8} << 20;
  Eigen::MatrixXd jac(rows, tape.num_inputs());
  const Index batch = std::min<Index>(rows, kAdjointBudget / std::max<Index>(tape.size(), 1));
  if (batch <= 1) {
    for (Index r = 0; r < rows; ++r) jac.row(r) = tape.vjp(Eigen::VectorXd::Unit(rows, r)).transpose();
    return jac;
  }
  for (Index start = 0; start < rows; start += batch) {
    const Index w = std::min(batch, rows - start);
    Eigen::MatrixXd seeds = Eigen::MatrixXd::Zero(rows, w);
    seeds.middleRows(start, w).setIdentity();
    jac.middleRows(start, w) = tape.vjp_many(seeds).transpose();
  }
  return jac;
}

/// Central differences of a vector-valued primal, one input at a time.
template <typename F>
Eigen::MatrixXd central_differences(F&& f, const Eigen::VectorXd& x, Index rows) {
  Eigen::MatrixXd jac(rows, x.size());
  Eigen::VectorXd xp = x;
  for (Index j = 0; j < x.size(); ++j) {
    const double h = 1e-6 * std::max(1.0, std::abs(x(j)));
    xp(j) = x(j) + h;
    const Eigen::VectorXd fp = f(xp);
    xp(j) = x(j) - h;
    const Eigen::VectorXd fm = f(xp);
    xp(j) = x(j);
    jac.col(j) = (fp - fm) / (2.0 * h);
  }
  return jac;
}

// ---------------------------------------------------------------------------
// Rosenbrock

Setup rosenbrock_setup(Index n, unsigned seed, const RunOptions& opts) {
  if (n < 2) throw ConfigError("rosenbrock needs n >= 2");
  RosenbrockConfig cfg;
  cfg.n = n;
  const Eigen::VectorXd x = cfg.x();
  std::seed_seq seq{seed, static_cast<unsigned>(n)};
  std::mt19937 rng(seq);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Eigen::VectorXd y0(n);
  for (Index i = 0; i < n; ++i) y0(i) = 1.0 + 0.2 * u(rng);
  const auto spec = make_residual_spec(n, n, RosenbrockResidual{});
  const SolverConfig solver;

  Setup s;
  s.kind = Case::Rosenbrock;
  s.n = n;
  s.states = n;
  s.inputs = n;
  s.outputs = n;
  s.primal_output = newton_solve(spec, VectorX<double>(x), y0, solver).y;
  s.primal_run = [=] { newton_solve(spec, VectorX<double>(x), y0, solver); };

  // A primal solver for the implicit rules that also counts iterations.
  auto counting_solver = [=](std::shared_ptr<Index> iters) -> PrimalSolver {
    return [=](const Eigen::VectorXd& xv) {
      auto res = newton_solve(spec, VectorX<double>(xv), y0, solver);
      *iters += res.stats.iterations;
      return Eigen::VectorXd(res.y);
    };
  };

  s.strategies.push_back({"fd-central",
                          [=] {
                            Outcome o;
                            Index iters = 0;
                            o.derivative = central_differences(
                                [&](const Eigen::VectorXd& xv) {
                                  auto res = newton_solve(spec, VectorX<double>(xv), y0, solver);
                                  iters += res.stats.iterations;
                                  return Eigen::VectorXd(res.y);
                                },
                                x, n);
                            auto res = newton_solve(spec, VectorX<double>(x), y0, solver);
                            o.output = res.y;
                            o.solver_iters = iters + res.stats.iterations;
                            return o;
                          },
                          true});

  s.strategies.push_back({"direct-forward", [=] {
                            Outcome o;
                            Index iters = 0;
                            o.derivative = jacobian_chunked<kChunk>(
                                [&](const auto& xv) {
                                  auto res = newton_solve(spec, xv, y0, solver);
                                  iters += res.stats.iterations;
                                  if (o.output.size() == 0) o.output = primal_values(res.y);
                                  return res.y;
                                },
                                x);
                            o.solver_iters = iters;
                            return o;
                          }});

  s.strategies.push_back({"direct-reverse", [=, cap = opts.max_tape_nodes] {
                            Outcome o;
                            Index iters = 0;
                            Recording rec = record(
                                [&](const VectorX<Var>& xv) {
                                  auto res = newton_solve(spec, xv, y0, solver);
                                  iters = res.stats.iterations;
                                  return res.y;
                                },
                                x, cap);
                            o.output = rec.outputs;
                            o.derivative = unit_rows_jacobian(rec.tape, n);
                            o.tape_nodes = rec.tape.size();
                            o.solver_iters = iters;
                            return o;
                          }});

  s.strategies.push_back({"implicit-forward", [=] {
                            Outcome o;
                            auto iters = std::make_shared<Index>(0);
                            const VectorX<Dual<double>> y =
                                implicit(spec, counting_solver(iters), lift(VectorX<double>(x), Eigen::MatrixXd::Identity(n, n)));
                            o.output = dual_values(y);
                            o.derivative = dual_partials(y, n);
                            o.solver_iters = *iters;
                            return o;
                          }});

  s.strategies.push_back({"implicit-reverse", [=] {
                            Outcome o;
                            auto iters = std::make_shared<Index>(0);
                            const PrimalSolver solve = counting_solver(iters);
                            Recording rec = record([&](const VectorX<Var>& xv) { return implicit(spec, solve, xv); }, x);
                            o.output = rec.outputs;
                            o.derivative = unit_rows_jacobian(rec.tape, n);
                            o.tape_nodes = rec.tape.size();
                            o.solver_iters = *iters;
                            return o;
                          }});
  return s;
}

// ---------------------------------------------------------------------------
// Heat plate

HeatPlateConfig heat_config(Index n, Index steps, Index default_steps) {
  if (n < 3) throw ConfigError("heat plate grid needs n >= 3");
  if (steps < 0) throw ConfigError("steps must be positive");
  HeatPlateConfig cfg;
  cfg.n = n;
  cfg.steps = steps > 0 ? steps : default_steps;
  return cfg;
}

Setup heat_common(Case kind, const HeatPlateConfig& cfg) {
  Setup s;
  s.kind = kind;
  s.n = cfg.n;
  s.states = cfg.states();
  s.inputs = cfg.inputs();
  s.outputs = 1;
  return s;
}

template <typename V>
auto corner(const V& y) {
  return V(y.head(1));
}

Setup heat_implicit_setup(Index n, Index steps, const RunOptions& opts) {
  const HeatPlateConfig cfg = heat_config(n, steps, 100);
  const auto spec = heat_implicit_spec(cfg);
  const Eigen::VectorXd x = cfg.default_inputs();
  const SolverConfig solver;
  const Index nx = x.size();

  Setup s = heat_common(Case::HeatImplicit, cfg);
  s.primal_output = corner(integrate_implicit(spec, x, solver).final_state());
  s.primal_run = [=] { integrate_implicit(spec, x, solver); };

  s.strategies.push_back({"fd-central",
                          [=] {
                            Outcome o;
                            Index iters = 0;
                            o.derivative = central_differences(
                                [&](const Eigen::VectorXd& xv) {
                                  const Trajectory t = integrate_implicit(spec, xv, solver);
                                  iters += t.solver_iterations;
                                  return corner(t.final_state());
                                },
                                x, 1);
                            const Trajectory t = integrate_implicit(spec, x, solver);
                            o.output = corner(t.final_state());
                            o.solver_iters = iters + t.solver_iterations;
                            return o;
                          },
                          true});

  s.strategies.push_back({"direct-forward", [=] {
                            Outcome o;
                            Index iters = 0;
                            o.derivative = jacobian_chunked<kChunk>(
                                [&](const auto& xv) {
                                  const auto y = integrate_implicit_final(spec, xv, solver, StepSolve::Unrolled, &iters);
                                  if (o.output.size() == 0) o.output = corner(primal_values(y));
                                  return corner(y);
                                },
                                x);
                            o.solver_iters = iters;
                            return o;
                          }});

  s.strategies.push_back({"direct-reverse", [=, cap = opts.max_tape_nodes] {
                            Outcome o;
                            Index iters = 0;
                            Recording rec = record(
                                [&](const VectorX<Var>& xv) {
                                  return corner(integrate_implicit_final(spec, xv, solver, StepSolve::Unrolled, &iters));
                                },
                                x, cap);
                            o.output = rec.outputs;
                            o.derivative = unit_rows_jacobian(rec.tape, 1);
                            o.tape_nodes = rec.tape.size();
                            o.solver_iters = iters;
                            return o;
                          }});

  s.strategies.push_back({"implicit-forward", [=] {
                            Outcome o;
                            const Trajectory t = integrate_implicit(spec, x, solver);
                            const Eigen::MatrixXd ydot =
                                ode_forward_sweep(spec, t, x, Eigen::MatrixXd::Identity(nx, nx), false).back();
                            o.output = corner(t.final_state());
                            o.derivative = ydot.topRows(1);
                            o.solver_iters = t.solver_iterations;
                            return o;
                          }});

  s.strategies.push_back({"implicit-reverse", [=] {
                            Outcome o;
                            Recording rec = record(
                                [&](const VectorX<Var>& xv) {
                                  return corner(integrate_implicit_final(spec, xv, solver, StepSolve::Implicit));
                                },
                                x);
                            o.output = rec.outputs;
                            o.derivative = unit_rows_jacobian(rec.tape, 1);
                            o.tape_nodes = rec.tape.size();
                            return o;
                          }});

  s.strategies.push_back({"per-step-reverse", [=] {
                            Outcome o;
                            const Trajectory t = integrate_implicit(spec, x, solver);
                            SweepStats stats;
                            const Eigen::VectorXd g =
                                ode_reverse_sweep(spec, t, x, Eigen::VectorXd::Unit(cfg.states(), 0), nullptr, {}, &stats);
                            o.output = corner(t.final_state());
                            o.derivative = g.transpose();
                            o.tape_nodes = stats.peak_tape_nodes;
                            o.solver_iters = t.solver_iterations;
                            return o;
                          }});
  return s;
}

Setup heat_explicit_setup(Index n, Index steps, const RunOptions& opts) {
  const HeatPlateConfig cfg = heat_config(n, steps, 1000);
  const auto spec = heat_explicit_spec(cfg);
  const Eigen::VectorXd x = cfg.default_inputs();

  Setup s = heat_common(Case::HeatExplicit, cfg);
  s.primal_output = corner(integrate_explicit_final(spec, VectorX<double>(x)));
  s.primal_run = [=] { integrate_explicit_final(spec, VectorX<double>(x)); };

  s.strategies.push_back({"fd-central",
                          [=] {
                            Outcome o;
                            o.derivative = central_differences(
                                [&](const Eigen::VectorXd& xv) {
                                  return corner(integrate_explicit_final(spec, VectorX<double>(xv)));
                                },
                                x, 1);
                            o.output = corner(integrate_explicit_final(spec, VectorX<double>(x)));
                            return o;
                          },
                          true});

  s.strategies.push_back({"direct-forward", [=] {
                            Outcome o;
                            o.derivative = jacobian_chunked<kChunk>(
                                [&](const auto& xv) {
                                  const auto y = integrate_explicit_final(spec, xv);
                                  if (o.output.size() == 0) o.output = corner(primal_values(y));
                                  return corner(y);
                                },
                                x);
                            return o;
                          }});

  s.strategies.push_back({"direct-reverse", [=, cap = opts.max_tape_nodes] {
                            Outcome o;
                            Recording rec = record(
                                [&](const VectorX<Var>& xv) { return corner(integrate_explicit_final(spec, xv)); }, x, cap);
                            o.output = rec.outputs;
                            o.derivative = unit_rows_jacobian(rec.tape, 1);
                            o.tape_nodes = rec.tape.size();
                            return o;
                          }});

  s.strategies.push_back({"per-step-reverse", [=] {
                            Outcome o;
                            const Trajectory t = integrate_explicit(spec, x);
                            SweepStats stats;
                            const Eigen::VectorXd g = explicit_reverse_per_step(
                                spec, t, x, Eigen::VectorXd::Unit(cfg.states(), 0), {}, &stats);
                            o.output = corner(t.final_state());
                            o.derivative = g.transpose();
                            o.tape_nodes = stats.peak_tape_nodes;
                            return o;
                          }});
  return s;
}

Setup make_setup(Case c, Index n, const RunOptions& opts) {
  switch (c) {
    case Case::Rosenbrock:
      return rosenbrock_setup(n, opts.seed, opts);
    case Case::HeatImplicit:
      return heat_implicit_setup(n, opts.steps, opts);
    case Case::HeatExplicit:
      return heat_explicit_setup(n, opts.steps, opts);
  }
  throw ConfigError("unknown case");
}

std::vector<std::string> selected_strategies(Case c, const RunOptions& opts) {
  const std::vector<std::string> all = strategies_for(c);
  if (opts.strategies.empty()) return all;
  for (const auto& name : opts.strategies) {
    if (std::find(all.begin(), all.end(), name) == all.end()) {
      throw ConfigError("strategy '" + name + "' is not available for " + case_name(c));
    }
  }
  // Report in canonical order.
  std::vector<std::string> out;
  for (const auto& name : all)
    if (std::find(opts.strategies.begin(), opts.strategies.end(), name) != opts.strategies.end()) out.push_back(name);
  return out;
}

std::vector<BenchRecord> run_size(Case c, Index n, const RunOptions& opts, bool timed) {
  const Setup s = make_setup(c, n, opts);
  const std::vector<std::string> names = selected_strategies(c, opts);
  const int samples = std::max(1, timed ? opts.samples : 1);

  std::map<std::string, Eigen::MatrixXd> derivatives;
  std::vector<BenchRecord> records;
  for (const auto& name : names) {
    const auto it = std::find_if(s.strategies.begin(), s.strategies.end(), [&](const Strategy& st) { return st.name == name; });
    BenchRecord rec;
    rec.case_id = case_name(c);
    rec.strategy = name;
    rec.n = s.n;
    rec.states = s.states;
    rec.inputs = s.inputs;
    rec.outputs = s.outputs;

    try {
      if (it->finite_difference && opts.fd_estimate) {
        std::vector<double> times;
        const auto start = Clock::now();
        for (int k = 0; k < samples; ++k) {
          const auto t0 = Clock::now();
          s.primal_run();
          times.push_back(seconds_since(t0));
          if (opts.max_seconds > 0.0 && seconds_since(start) > opts.max_seconds) break;
        }
        rec.estimated = true;
        rec.samples = static_cast<int>(times.size());
        if (timed) rec.median_seconds = median(times) * static_cast<double>(s.inputs + 1);
        rec.output = s.primal_output;
      } else {
        std::vector<double> times;
        Outcome last;
        const auto start = Clock::now();
        for (int k = 0; k < samples; ++k) {
          const auto t0 = Clock::now();
          last = it->run();
          times.push_back(seconds_since(t0));
          if (opts.max_seconds > 0.0 && seconds_since(start) > opts.max_seconds) break;
        }
        rec.samples = static_cast<int>(times.size());
        if (timed) rec.median_seconds = median(times);
        rec.tape_nodes = last.tape_nodes;
        rec.solver_iters = last.solver_iters;
        rec.output = last.output;
        derivatives[name] = std::move(last.derivative);
      }
      if (rec.output.size() == s.primal_output.size()) {
        rec.output_err = (rec.output - s.primal_output).cwiseAbs().maxCoeff();
      }
    } catch (const TapeLimitError& e) {
      rec.error = std::string("tape limit: ") + e.what();
    } catch (const Error& e) {
      rec.error = e.what();
    } catch (const std::bad_alloc&) {
      rec.error = "out of memory";
    }
    records.push_back(std::move(rec));
  }

  // Reference derivatives: reuse the run if it happened, otherwise compute once when affordable.
  const std::string ref_name = reference_strategy(c);
  std::optional<Eigen::MatrixXd> reference;
  if (auto f = derivatives.find(ref_name); f != derivatives.end()) {
    reference = f->second;
  } else if (s.inputs <= opts.max_reference_inputs) {
    const auto it = std::find_if(s.strategies.begin(), s.strategies.end(), [&](const Strategy& st) { return st.name == ref_name; });
    try {
      reference = it->run().derivative;
    } catch (const Error&) {
    } catch (const std::bad_alloc&) {
    }
  }
  for (auto& rec : records) {
    const auto d = derivatives.find(rec.strategy);
    if (d == derivatives.end()) continue;
    if (reference) rec.max_rel_err = relative_error(d->second, *reference);
    if (opts.keep_derivatives) rec.derivative = d->second;
  }
  return records;
}

std::vector<BenchRecord> run_sizes(Case c, const RunOptions& opts) {
  if (opts.sizes.empty()) throw ConfigError("no sizes given");
  if (opts.samples < 1) throw ConfigError("samples must be at least 1");
  selected_strategies(c, opts);  // validate before any work

  std::vector<BenchRecord> out;
  if (opts.parallel) {
    std::vector<std::future<std::vector<BenchRecord>>> jobs;
    for (Index n : opts.sizes) jobs.push_back(std::async(std::launch::async, [=] { return run_size(c, n, opts, false); }));
    for (auto& j : jobs) {
      auto recs = j.get();
      out.insert(out.end(), recs.begin(), recs.end());
    }
  } else {
    for (Index n : opts.sizes) {
      auto recs = run_size(c, n, opts, true);
      out.insert(out.end(), recs.begin(), recs.end());
    }
  }
  return out;
}

template <typename T>
void write_opt(std::ostream& out, const std::optional<T>& v) {
  if (v) out << *v;
}

bool is_fd(const std::string& strategy) { return strategy == "fd-central"; }

}  // namespace

std::string case_name(Case c) {
  switch (c) {
    case Case::Rosenbrock:
      return "rosenbrock";
    case Case::HeatImplicit:
      return "heat-implicit";
    case Case::HeatExplicit:
      return "heat-explicit";
  }
  return "unknown";
}

std::optional<Case> parse_case(const std::string& name) {
  for (Case c : {Case::Rosenbrock, Case::HeatImplicit, Case::HeatExplicit})
    if (case_name(c) == name) return c;
  return std::nullopt;
}

std::vector<std::string> strategies_for(Case c) {
  switch (c) {
    case Case::Rosenbrock:
      return {"fd-central", "direct-forward", "direct-reverse", "implicit-forward", "implicit-reverse"};
    case Case::HeatImplicit:
      return {"fd-central", "direct-forward", "direct-reverse", "implicit-forward", "implicit-reverse", "per-step-reverse"};
    case Case::HeatExplicit:
      return {"fd-central", "direct-forward", "direct-reverse", "per-step-reverse"};
  }
  return {};
}

std::string reference_strategy(Case c) { return c == Case::HeatExplicit ? "direct-reverse" : "implicit-forward"; }

std::vector<BenchRecord> run_rosenbrock(const RunOptions& opts) { return run_sizes(Case::Rosenbrock, opts); }
std::vector<BenchRecord> run_heat_implicit(const RunOptions& opts) { return run_sizes(Case::HeatImplicit, opts); }
std::vector<BenchRecord> run_heat_explicit(const RunOptions& opts) { return run_sizes(Case::HeatExplicit, opts); }
std::vector<BenchRecord> run_case(Case c, const RunOptions& opts) { return run_sizes(c, opts); }

void write_csv(std::ostream& out, const std::vector<BenchRecord>& records) {
  std::ostringstream buf;
  buf.imbue(std::locale::classic());
  buf << std::setprecision(9);
  buf << kCsvHeader << '\n';
  for (const auto& r : records) {
    buf << r.case_id << ',' << (r.estimated ? "fd-estimate" : r.strategy) << ',' << r.n << ',' << r.states << ','
        << r.inputs << ',' << r.outputs << ',';
    write_opt(buf, r.median_seconds);
    buf << ',';
    write_opt(buf, r.max_rel_err);
    buf << ',';
    write_opt(buf, r.tape_nodes);
    buf << ',';
    write_opt(buf, r.solver_iters);
    buf << '\n';
  }
  out << buf.str();
}

void write_csv(const std::string& path, const std::vector<BenchRecord>& records) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path + " for writing");
  write_csv(out, records);
}

double relative_error(const Eigen::MatrixXd& a, const Eigen::MatrixXd& ref) {
  if (a.rows() != ref.rows() || a.cols() != ref.cols()) return std::numeric_limits<double>::infinity();
  if (ref.size() == 0) return 0.0;
  const double diff = (a - ref).cwiseAbs().maxCoeff();
  const double scale = ref.cwiseAbs().maxCoeff();
  return scale > 1e-8 ? diff / scale : diff;
}

CheckReport check(Case c, Index size, Index steps, const CheckTolerances& tol, unsigned seed) {
  RunOptions opts;
  opts.sizes = {size};
  opts.samples = 1;
  opts.steps = steps;
  opts.seed = seed;
  opts.keep_derivatives = true;
  opts.max_tape_nodes = Tape::kNoLimit;
  opts.max_reference_inputs = std::numeric_limits<Index>::max();

  CheckReport report;
  report.records = run_size(c, size, opts, true);

  const std::string ref_name = reference_strategy(c);
  const auto ref = std::find_if(report.records.begin(), report.records.end(),
                                [&](const BenchRecord& r) { return r.strategy == ref_name; });
  const bool zero_ref = ref != report.records.end() && ref->derivative &&
                        (ref->derivative->size() == 0 || ref->derivative->cwiseAbs().maxCoeff() <= 1e-8);

  std::ostringstream head;
  head << "check " << case_name(c) << " n=" << size;
  if (c != Case::Rosenbrock) head << " steps=" << (steps > 0 ? steps : (c == Case::HeatImplicit ? 100 : 1000));
  head << " reference=" << ref_name;
  report.lines.push_back(head.str());

  for (const auto& r : report.records) {
    std::ostringstream line;
    line << std::setprecision(3) << std::scientific;
    line << "  " << std::left << std::setw(18) << r.strategy;
    bool ok = true;
    if (!r.error.empty()) {
      ok = false;
      line << "error: " << r.error;
    } else {
      const double limit = is_fd(r.strategy) ? tol.fd : (zero_ref ? tol.ad_zero : tol.ad);
      if (!r.max_rel_err) {
        ok = false;
        line << "no reference";
      } else {
        ok = *r.max_rel_err <= limit;
        line << "max_err=" << *r.max_rel_err << " (limit " << limit << (zero_ref && !is_fd(r.strategy) ? " abs" : "")
             << ")";
      }
      if (r.output_err) {
        const bool out_ok = *r.output_err <= tol.output;
        ok = ok && out_ok;
        line << "  output_err=" << *r.output_err;
      }
      if (r.median_seconds) line << "  t=" << *r.median_seconds << "s";
    }
    line << (ok ? "  ok" : "  VIOLATION");
    report.pass = report.pass && ok;
    report.lines.push_back(line.str());
  }
  report.lines.push_back(report.pass ? "PASS" : "FAIL");
  return report;
}

}  // namespace iad::bench
