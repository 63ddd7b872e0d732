#pragma once

// Batch commands behind the wdro executable: solve, sweep, eval and verify.
// Commands write CSV to the given stream and diagnostics to a log stream and
// return the process exit code.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "wdro/config.hpp"
#include "wdro/examples.hpp"
#include "wdro/outer.hpp"
#include "wdro/production.hpp"
#include "wdro/relax.hpp"

namespace wdro::app {

enum ExitCode : int { kSuccess = 0, kPathology = 1, kUsage = 2, kNumerical = 3 };

struct RunOptions {
  std::size_t threads = 0;  // 0: hardware concurrency
  bool verbose = false;
  bool record_time = true;  // false writes time_s = 0 for byte-identical output
  std::ostream* iterate_log = nullptr;  // bundle iterates as CSV when set
};

struct SweepRecord {
  double radius = 0.0;
  std::string status = "numerical_failure";
  double in_sample = std::numeric_limits<double>::quiet_NaN();
  double lambda = std::numeric_limits<double>::quiet_NaN();
  std::optional<production::OosStats> oos;
  Eigen::VectorXd x;
  double time_s = 0.0;
  std::string message;
};

inline std::string format_number(double v) {
  if (!std::isfinite(v)) return std::isnan(v) ? "" : (v > 0 ? "inf" : "-inf");
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

inline int exit_code_for(const std::string& status) {
  if (status == "optimal") return kSuccess;
  if (status == "unbounded" || status == "infeasible") return kPathology;
  return kNumerical;
}

inline void write_sweep_header(std::ostream& out, std::size_t n1) {
  out << "radius,status,in_sample,lambda,oos_mean,oos_median,oos_q10,oos_q90,oos_std,time_s";
  for (std::size_t j = 1; j <= n1; ++j) out << ",x" << j;
  out << '\n';
}

inline void write_sweep_row(std::ostream& out, const SweepRecord& r, std::size_t n1) {
  out << format_number(r.radius) << ',' << r.status << ',' << format_number(r.in_sample) << ',' << format_number(r.lambda);
  if (r.oos) {
    out << ',' << format_number(r.oos->mean) << ',' << format_number(r.oos->median) << ',' << format_number(r.oos->q10) << ','
        << format_number(r.oos->q90) << ',' << format_number(r.oos->std);
  } else {
    out << ",,,,,";
  }
  out << ',' << format_number(r.time_s);
  for (std::size_t j = 0; j < n1; ++j) {
    out << ',';
    if (static_cast<std::size_t>(r.x.size()) == n1) out << format_number(r.x(static_cast<Eigen::Index>(j)));
  }
  out << '\n';
}

inline void write_iterate_header(std::ostream& out, std::size_t n1) {
  out << "radius,iter";
  for (std::size_t j = 1; j <= n1; ++j) out << ",x" << j;
  out << ",lambda,value,gap\n";
}

inline void write_iterates(std::ostream& out, double r, const std::vector<BundleLogEntry>& log) {
  for (const auto& e : log) {
    out << format_number(r) << ',' << e.iter;
    for (Eigen::Index j = 0; j < e.z.size(); ++j) out << ',' << format_number(e.z(j));
    out << ',' << format_number(e.value) << ',' << format_number(e.upper - e.lower) << '\n';
  }
}

using Instance = std::variant<SingleStageInstance, TwoStageInstance>;

inline std::size_t decision_dim(const Instance& inst) {
  return std::visit([](const auto& i) { return i.n1; }, inst);
}

inline RelaxationModel make_model(const RunConfig& cfg, const Instance& inst, double r) {
  try {
    if (const auto* s = std::get_if<SingleStageInstance>(&inst)) {
      RelaxationModel m(*s, cfg.order_k);
      const Eigen::VectorXd mid = 0.5 * (s->lo + s->hi);
      if (m.minimum_order(mid) > cfg.order_k) {
        throw ConfigError("order_k = " + std::to_string(cfg.order_k) + " is below the minimum order " + std::to_string(m.minimum_order(mid)));
      }
      return m;
    }
    const auto& t = std::get<TwoStageInstance>(inst);
    std::optional<double> eps;
    if (cfg.strengthen) eps = cfg.epsilon ? *cfg.epsilon : default_epsilon(t.samples.size(), r, t.p);
    RelaxationModel m(t, cfg.order_k, eps);
    const Eigen::VectorXd mid = 0.5 * (t.lo + t.hi);
    if (m.minimum_order(mid) > cfg.order_k) {
      throw ConfigError("order_k = " + std::to_string(cfg.order_k) + " is below the minimum order " + std::to_string(m.minimum_order(mid)));
    }
    return m;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

inline WdroOptions wdro_options(const RunConfig& cfg, const RunOptions& opt) {
  WdroOptions w;
  w.sdp.tol = cfg.tol.sdp;
  w.bundle.tol = cfg.tol.bundle;
  w.bundle.max_iters = cfg.tol.bundle_max_iters;
  w.bundle.verbose = opt.verbose;
  w.threads = resolve_threads(opt.threads);
  w.verbose = opt.verbose;
  return w;
}

// One radius: ESO at r = 0, the relaxed DRO otherwise, then out-of-sample
// statistics when the problem has a sampling distribution.
inline SweepRecord run_radius(const RunConfig& cfg, const Instance& inst, double r, const RunOptions& opt, std::ostream& log) {
  const auto t0 = std::chrono::steady_clock::now();
  SweepRecord rec;
  rec.radius = r;
  BundleOptions bopt;
  bopt.tol = cfg.tol.bundle;
  bopt.max_iters = cfg.tol.bundle_max_iters;
  try {
    if (r == 0.0) {
      const EsoResult e = std::visit([&](const auto& i) { return solve_eso(i, bopt); }, inst);
      rec.status = "optimal";
      rec.in_sample = e.value;
      rec.x = e.x;
    } else {
      const RelaxationModel model = make_model(cfg, inst, r);
      const WdroResult w = solve_wdro(model, r, wdro_options(cfg, opt));
      rec.status = "optimal";
      rec.in_sample = w.value;
      rec.lambda = w.lambda;
      rec.x = w.x;
      if (opt.iterate_log) write_iterates(*opt.iterate_log, r, w.log);
      for (const auto& msg : w.warnings) log << "wdro: r = " << format_number(r) << ": " << msg << '\n';
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const InnerProblemError& e) {
    rec.status = conic::to_string(e.status());
    rec.message = e.what();
  } catch (const std::exception& e) {
    rec.status = "numerical_failure";
    rec.message = e.what();
  }
  if (rec.status == "optimal" && cfg.has_distribution()) {
    const auto oos = production::evaluate_out_of_sample(cfg.production->params, rec.x, cfg.eval_seed, cfg.eval_count,
                                                        resolve_threads(opt.threads));
    rec.oos = oos.stats;
  }
  if (!rec.message.empty()) log << "wdro: r = " << format_number(r) << ": " << rec.message << '\n';
  if (opt.record_time) rec.time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

inline int cmd_solve(const RunConfig& cfg, std::optional<double> radius, std::ostream& out, std::ostream& log,
                     const RunOptions& opt = {}) {
  double r = 0.0;
  if (radius) {
    if (!(*radius >= 0.0)) throw ConfigError("--radius must be nonnegative");
    r = *radius;
  } else {
    if (cfg.radii.size() != 1) throw ConfigError("solve needs a single radius: give --radius or one entry in 'radii'");
    r = cfg.radii.front();
  }
  const Instance inst = build_instance(cfg);
  const std::size_t n1 = decision_dim(inst);
  if (opt.iterate_log) write_iterate_header(*opt.iterate_log, n1);
  const SweepRecord rec = run_radius(cfg, inst, r, opt, log);
  write_sweep_header(out, n1);
  write_sweep_row(out, rec, n1);
  return exit_code_for(rec.status);
}

inline int cmd_sweep(const RunConfig& cfg, std::optional<double> radius, std::ostream& out, std::ostream& log,
                     const RunOptions& opt = {}) {
  std::vector<double> radii = cfg.radii;
  if (radius) {
    if (!(*radius >= 0.0)) throw ConfigError("--radius must be nonnegative");
    radii = {*radius};
  }
  const Instance inst = build_instance(cfg);
  const std::size_t n1 = decision_dim(inst);
  write_sweep_header(out, n1);
  if (opt.iterate_log) write_iterate_header(*opt.iterate_log, n1);
  int code = kSuccess;
  std::optional<double> previous;
  for (double r : radii) {
    const SweepRecord rec = run_radius(cfg, inst, r, opt, log);
    write_sweep_row(out, rec, n1);
    out.flush();
    const int c = exit_code_for(rec.status);
    if (c == kNumerical || (c == kPathology && code == kSuccess)) code = c;
    if (rec.status == "optimal") {
      // The in-sample value is a supremum over growing balls.
      if (previous && rec.in_sample < *previous - 1e-6 * (1.0 + std::abs(*previous))) {
        log << "wdro: warning: in-sample value decreased at r = " << format_number(r) << '\n';
      }
      previous = rec.in_sample;
    }
  }
  return code;
}

// Reads a decision vector: numbers separated by commas or whitespace, or a
// solve/sweep CSV, in which case the x columns of the first row are used.
inline Eigen::VectorXd read_decision(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open decision file '" + path + "'");
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(line);
  }
  if (lines.empty()) throw ConfigError("decision file '" + path + "' is empty");
  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : s) {
      if (ch == ',') {
        out.push_back(cur);
        cur.clear();
      } else {
        cur.push_back(ch);
      }
    }
    out.push_back(cur);
    return out;
  };
  auto to_double = [&](const std::string& tok) {
    try {
      std::size_t used = 0;
      const double v = std::stod(tok, &used);
      if (tok.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(tok);
      return v;
    } catch (const std::logic_error&) {
      throw ConfigError("decision file '" + path + "': malformed number '" + tok + "'");
    }
  };
  std::vector<double> vals;
  if (lines.front().rfind("radius,", 0) == 0) {
    const auto header = split(lines.front());
    if (lines.size() < 2) throw ConfigError("decision file '" + path + "' has no data row");
    const auto row = split(lines[1]);
    for (std::size_t c = 0; c < header.size() && c < row.size(); ++c) {
      if (header[c].size() > 1 && header[c][0] == 'x') vals.push_back(to_double(row[c]));
    }
  } else {
    for (const auto& l : lines) {
      std::string t = l;
      for (char& ch : t) {
        if (ch == ',') ch = ' ';
      }
      std::istringstream ss(t);
      std::string tok;
      while (ss >> tok) vals.push_back(to_double(tok));
    }
  }
  Eigen::VectorXd x(static_cast<Eigen::Index>(vals.size()));
  for (std::size_t j = 0; j < vals.size(); ++j) x(static_cast<Eigen::Index>(j)) = vals[j];
  return x;
}

inline int cmd_eval(const RunConfig& cfg, const Eigen::VectorXd& x, std::ostream& out, const RunOptions& opt = {}) {
  if (!cfg.has_distribution()) throw ConfigError("eval needs a production config (no sampling distribution otherwise)");
  const auto& params = cfg.production->params;
  if (x.size() != static_cast<Eigen::Index>(params.n1)) {
    throw ConfigError("decision has " + std::to_string(x.size()) + " entries, the config expects " + std::to_string(params.n1));
  }
  const auto res = production::evaluate_out_of_sample(params, x, cfg.eval_seed, cfg.eval_count, resolve_threads(opt.threads));
  out << "sample_index,value\n";
  for (std::size_t j = 0; j < res.values.size(); ++j) out << (j + 1) << ',' << format_number(res.values[j]) << '\n';
  out << "mean," << format_number(res.stats.mean) << '\n';
  out << "median," << format_number(res.stats.median) << '\n';
  out << "q10," << format_number(res.stats.q10) << '\n';
  out << "q90," << format_number(res.stats.q90) << '\n';
  out << "std," << format_number(res.stats.std) << '\n';
  return kSuccess;
}

struct FixtureResult {
  std::string name;
  bool pass = false;
  std::string expected;
  std::string got;
};

// Built-in checks on the worked instances and the r = 0 exactness.
inline std::vector<FixtureResult> run_fixtures(std::size_t threads) {
  std::vector<FixtureResult> out;
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(1);

  {
    const RelaxationModel m(examples::separable(), 2);
    WdroOptions w;
    w.bundle.tol = 1e-8;
    w.threads = threads;
    for (double r : {0.1, 0.25, 0.4}) {
      FixtureResult f;
      f.name = "separable k=2 r=" + format_number(r);
      f.expected = "value " + format_number(r) + " +- 1e-5";
      try {
        const WdroResult res = solve_wdro(m, r, w);
        f.got = "value " + format_number(res.value);
        f.pass = std::abs(res.value - r) <= 1e-5;
      } catch (const std::exception& e) {
        f.got = e.what();
      }
      out.push_back(f);
    }
    const VFormResult v0 = V_form(m, zero, 0.0);
    FixtureResult f{"separable r=0 exactness", false, "value 0 +- 1e-5", ""};
    f.got = std::string(conic::to_string(v0.status)) + " " + format_number(v0.value);
    f.pass = v0.status == conic::SolveStatus::Optimal && std::abs(v0.value) <= 1e-5;
    out.push_back(f);
  }

  auto unbounded_fixture = [&](const std::string& name, const RelaxationModel& m, double lambda) {
    FixtureResult f{name, false, "unbounded", ""};
    const VfResult v = v_form(m, zero, lambda, 0.1, {}, threads);
    f.got = conic::to_string(v.status);
    f.pass = v.status == conic::SolveStatus::Unbounded;
    out.push_back(f);
  };
  for (int k : {2, 3}) {
    const RelaxationModel m(examples::motzkin_orthant(), k);
    for (double lambda : {0.0, 1.0, 10.0}) {
      unbounded_fixture("motzkin orthant k=" + std::to_string(k) + " lambda=" + format_number(lambda), m, lambda);
    }
  }
  for (int k : {2, 3}) {
    const RelaxationModel m(examples::half_strip(), k);
    unbounded_fixture("half strip k=" + std::to_string(k) + " lambda=1", m, 1.0);
  }

  {
    // Two-stage r = 0 exactness against the primal recourse LP.
    const auto params = production::default_config(2, 2);
    const auto samples = production::sample_uncertainty(params, 7, 2);
    const TwoStageInstance inst = production::to_instance(params, samples);
    const RelaxationModel m(inst, 1);
    const Eigen::VectorXd x = Eigen::VectorXd::Constant(2, 1.5);
    double saa = 0.0;
    for (const auto& s : samples) saa += production::recourse_cost(params, x, s) / static_cast<double>(samples.size());
    const VFormResult v0 = V_form(m, x, 0.0);
    FixtureResult f{"production 2x2 r=0 exactness", false, "value " + format_number(saa) + " +- 1e-5 rel", ""};
    f.got = std::string(conic::to_string(v0.status)) + " " + format_number(v0.value);
    f.pass = v0.status == conic::SolveStatus::Optimal && std::abs(v0.value - saa) <= 1e-5 * (1.0 + std::abs(saa));
    out.push_back(f);
  }
  return out;
}

inline int cmd_verify(std::ostream& out, const RunOptions& opt = {}) {
  const auto results = run_fixtures(resolve_threads(opt.threads));
  int failed = 0;
  for (const auto& r : results) {
    out << (r.pass ? "PASS" : "FAIL") << "  " << r.name << "  expected: " << r.expected << "  got: " << r.got << '\n';
    if (!r.pass) ++failed;
  }
  out << (results.size() - static_cast<std::size_t>(failed)) << "/" << results.size() << " fixtures passed\n";
  return failed == 0 ? kSuccess : kPathology;
}

}  // namespace wdro::app
