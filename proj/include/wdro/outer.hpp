#pragma once

// Outer minimization over (x, lambda): subgradients from inner maximizers, a
// level bundle method on a box, the relaxed DRO driver and the ESO baseline.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <deque>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "wdro/conic/lp.hpp"
#include "wdro/conic/qp.hpp"
#include "wdro/relax.hpp"

namespace wdro {

struct OuterIterate {
  Eigen::VectorXd x;
  double lambda = 0.0;
  double value = 0.0;
  Eigen::VectorXd subgradient;  // length n1 + 1, lambda last
};

// Raised when an inner program at some (x, lambda) is not solved to optimality.
class InnerProblemError : public std::runtime_error {
 public:
  InnerProblemError(conic::SolveStatus status, std::size_t sample, double lambda, const std::string& detail)
      : std::runtime_error(std::string("inner problem ") + conic::to_string(status) + " at sample " +
                           std::to_string(sample + 1) + ", lambda " + format(lambda) + (detail.empty() ? "" : ": " + detail)),
        status_(status),
        sample_(sample),
        lambda_(lambda) {}
  conic::SolveStatus status() const { return status_; }
  std::size_t sample() const { return sample_; }  // 0-based
  double lambda() const { return lambda_; }

 private:
  static std::string format(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
  }
  conic::SolveStatus status_;
  std::size_t sample_;
  double lambda_;
};

// (grad f + (1/N) sum <d_x obj, y_i>, r^p - (1/N) sum <Q_i, y_i>)
inline Eigen::VectorXd subgradient(const RelaxationModel& model, const Eigen::VectorXd& x, double r,
                                   const std::vector<Tms>& maximizers) {
  const std::size_t N = model.sample_count();
  if (maximizers.size() != N) throw std::invalid_argument("subgradient: one maximizer per sample required");
  for (const auto& y : maximizers) {
    if (!y.basis || y.nvars() != model.nvars() || y.degree() < 2 * model.order()) {
      throw std::invalid_argument("subgradient: maximizer does not match the relaxation");
    }
  }
  const std::size_t n1 = model.decision_dim();
  const auto grads = model.objective_x_gradient(x);
  Eigen::VectorXd g(static_cast<Eigen::Index>(n1 + 1));
  g.head(static_cast<Eigen::Index>(n1)) = model.f_gradient(x);
  const double invN = 1.0 / static_cast<double>(N);
  for (std::size_t j = 0; j < n1; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < N; ++i) s += pair(grads[j], maximizers[i]);
    g(static_cast<Eigen::Index>(j)) += invN * s;
  }
  double q = 0.0;
  for (std::size_t i = 0; i < N; ++i) q += pair(model.distance(i), maximizers[i]);
  g(static_cast<Eigen::Index>(n1)) = std::pow(r, model.p()) - invN * q;
  return g;
}

inline Eigen::VectorXd subgradient_single(const SingleStageInstance& inst, const Eigen::VectorXd& x, double r, int k,
                                          const std::vector<Tms>& maximizers) {
  return subgradient(RelaxationModel(inst, k), x, r, maximizers);
}

inline Eigen::VectorXd subgradient_two_stage(const TwoStageInstance& inst, const Eigen::VectorXd& x, double r, int k,
                                             const std::vector<Tms>& maximizers) {
  return subgradient(RelaxationModel(inst, k), x, r, maximizers);
}

struct OracleResult {
  double value = 0.0;
  Eigen::VectorXd subgradient;
};
using Oracle = std::function<OracleResult(const Eigen::VectorXd&)>;

struct BundleOptions {
  double tol = 1e-6;
  int max_iters = 300;
  double gamma = 0.5;  // level parameter
  std::size_t capacity = 200;
  bool verbose = false;
};

struct BundleLogEntry {
  int iter = 0;
  Eigen::VectorXd z;
  double value = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

struct BundleResult {
  Eigen::VectorXd z;
  double value = std::numeric_limits<double>::infinity();
  double lower = -std::numeric_limits<double>::infinity();
  int iterations = 0;
  bool converged = false;
  std::vector<BundleLogEntry> log;
};

struct BundleState {
  struct Cut {
    Eigen::VectorXd w;
    double value;
    Eigen::VectorXd g;
  };
  std::deque<Cut> cuts;
  double lower = -std::numeric_limits<double>::infinity();
  double upper = std::numeric_limits<double>::infinity();
  double gamma = 0.5;
};

namespace detail {

// min theta s.t. f_j + g_j^T (w - w_j) <= theta, 0 <= w <= 1. theta is
// shifted by the largest per-cut minimum over the box, so it stays >= 0.
inline std::pair<double, Eigen::VectorXd> minimize_model(const std::deque<BundleState::Cut>& cuts, Eigen::Index n) {
  const auto K = static_cast<Eigen::Index>(cuts.size());
  if (n == 0) {
    double m = -std::numeric_limits<double>::infinity();
    for (const auto& c : cuts) m = std::max(m, c.value);
    return {m, Eigen::VectorXd()};
  }
  double shift = -std::numeric_limits<double>::infinity();
  for (const auto& c : cuts) shift = std::max(shift, c.value - c.g.dot(c.w) + c.g.cwiseMin(0.0).sum());
  // Columns: w (n), theta - shift, cut slacks (K), box slacks (n).
  conic::LinearProgram lp;
  lp.A = Eigen::MatrixXd::Zero(K + n, 2 * n + 1 + K);
  lp.rhs.resize(K + n);
  lp.c = Eigen::VectorXd::Zero(2 * n + 1 + K);
  lp.c(n) = 1.0;
  for (Eigen::Index j = 0; j < K; ++j) {
    const auto& cut = cuts[static_cast<std::size_t>(j)];
    lp.A.row(j).head(n) = cut.g.transpose();
    lp.A(j, n) = -1.0;
    lp.A(j, n + 1 + j) = 1.0;
    lp.rhs(j) = cut.g.dot(cut.w) - cut.value + shift;
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    lp.A(K + i, i) = 1.0;
    lp.A(K + i, n + 1 + K + i) = 1.0;
    lp.rhs(K + i) = 1.0;
  }
  const conic::LpSolution sol = conic::solve_lp(lp);
  if (sol.status != conic::LpStatus::Optimal) {
    throw std::runtime_error(std::string("bundle: model LP ") + conic::to_string(sol.status));
  }
  Eigen::VectorXd w = sol.x.head(n).cwiseMax(0.0).cwiseMin(1.0);
  double model = -std::numeric_limits<double>::infinity();
  for (const auto& c : cuts) model = std::max(model, c.value + c.g.dot(w - c.w));
  return {model, w};
}

}  // namespace detail

// Level bundle method for a convex oracle on the box [lo, hi]. Coordinates
// are rescaled to [0, 1] internally; fixed coordinates (lo == hi) drop out.
inline BundleResult level_bundle_minimize(const Oracle& oracle, const Eigen::VectorXd& lo, const Eigen::VectorXd& hi,
                                          const Eigen::VectorXd& z0, const BundleOptions& opt = {}) {
  const Eigen::Index dim = lo.size();
  if (hi.size() != dim || z0.size() != dim) throw std::invalid_argument("bundle: dimension mismatch");
  if ((lo.array() > hi.array()).any()) throw std::invalid_argument("bundle: empty box");
  if (!(opt.gamma > 0.0 && opt.gamma < 1.0)) throw std::invalid_argument("bundle: gamma must lie in (0, 1)");
  if (opt.capacity < 1) throw std::invalid_argument("bundle: capacity must be positive");

  std::vector<Eigen::Index> free;
  for (Eigen::Index j = 0; j < dim; ++j) {
    if (hi(j) > lo(j)) free.push_back(j);
  }
  const auto n = static_cast<Eigen::Index>(free.size());
  auto to_z = [&](const Eigen::VectorXd& w) {
    Eigen::VectorXd z = lo;
    for (Eigen::Index a = 0; a < n; ++a) z(free[a]) = lo(free[a]) + (hi(free[a]) - lo(free[a])) * w(a);
    return z;
  };
  auto to_w = [&](const Eigen::VectorXd& z) {
    Eigen::VectorXd w(n);
    for (Eigen::Index a = 0; a < n; ++a) {
      w(a) = std::clamp((z(free[a]) - lo(free[a])) / (hi(free[a]) - lo(free[a])), 0.0, 1.0);
    }
    return w;
  };
  auto scaled_grad = [&](const Eigen::VectorXd& g) {
    Eigen::VectorXd gw(n);
    for (Eigen::Index a = 0; a < n; ++a) gw(a) = g(free[a]) * (hi(free[a]) - lo(free[a]));
    return gw;
  };

  BundleState st;
  st.gamma = opt.gamma;
  BundleResult res;
  Eigen::VectorXd w = to_w(z0);
  for (int it = 1; it <= opt.max_iters; ++it) {
    const Eigen::VectorXd z = to_z(w);
    const OracleResult o = oracle(z);
    if (!std::isfinite(o.value) || o.subgradient.size() != dim) throw std::runtime_error("bundle: oracle returned an invalid result");
    if (o.value < st.upper) {
      st.upper = o.value;
      res.z = z;
      res.value = o.value;
    }
    st.cuts.push_back({w, o.value, scaled_grad(o.subgradient)});
    if (st.cuts.size() > opt.capacity) st.cuts.pop_front();

    auto [model_min, w_lp] = detail::minimize_model(st.cuts, n);
    st.lower = std::max(st.lower, model_min);
    // Inexact oracles can push the model above the best value; clamp.
    if (st.lower > st.upper) st.lower = st.upper;
    res.iterations = it;
    res.lower = st.lower;
    res.log.push_back({it, z, o.value, st.lower, st.upper});
    if (opt.verbose) {
      std::fprintf(stderr, "bundle %3d value %.10g lower %.10g upper %.10g\n", it, o.value, st.lower, st.upper);
    }
    const double gap = st.upper - st.lower;
    if (gap <= opt.tol * (1.0 + std::abs(st.upper)) || n == 0) {
      res.converged = true;
      break;
    }
    const double level = st.lower + opt.gamma * gap;
    // Project the current point onto {model <= level} within the unit box.
    const auto K = static_cast<Eigen::Index>(st.cuts.size());
    Eigen::MatrixXd G(K + 2 * n, n);
    Eigen::VectorXd h(K + 2 * n);
    for (Eigen::Index j = 0; j < K; ++j) {
      const auto& c = st.cuts[static_cast<std::size_t>(j)];
      G.row(j) = c.g.transpose();
      h(j) = level - c.value + c.g.dot(c.w);
    }
    G.block(K, 0, n, n) = Eigen::MatrixXd::Identity(n, n);
    h.segment(K, n).setOnes();
    G.block(K + n, 0, n, n) = -Eigen::MatrixXd::Identity(n, n);
    h.segment(K + n, n).setZero();
    const auto proj = conic::project_onto_polyhedron(G, h, w, w_lp);
    w = proj.z.cwiseMax(0.0).cwiseMin(1.0);
  }
  return res;
}

struct WdroOptions {
  conic::SdpOptions sdp;
  BundleOptions bundle;
  std::size_t threads = 1;
  int max_cap_doublings = 3;
  std::optional<double> lambda_max;  // overrides the heuristic cap
  bool verbose = false;
};

struct WdroResult {
  Eigen::VectorXd x;
  double lambda = 0.0;
  double value = std::numeric_limits<double>::quiet_NaN();  // f(x) + v at (x, lambda)
  double lower = -std::numeric_limits<double>::infinity();
  int iterations = 0;
  int inner_solves = 0;
  int cap_doublings = 0;
  double lambda_max = 0.0;
  bool converged = false;
  std::vector<std::string> warnings;
  std::vector<BundleLogEntry> log;  // coordinates (x, lambda)
};

namespace detail {

// A few points of the box used to size the multiplier cap.
inline std::vector<Eigen::VectorXd> coarse_grid(const Eigen::VectorXd& lo, const Eigen::VectorXd& hi) {
  return {lo, hi, 0.5 * (lo + hi)};
}

inline double max_abs_sample_cost(const RelaxationModel& model) {
  double m = 0.0;
  for (const auto& x : coarse_grid(model.lo(), model.hi())) {
    if (const auto* s = model.single()) {
      const Polynomial Fx = instantiate_Fx(*s, x);
      for (const auto& xi : s->samples) m = std::max(m, std::abs(Fx.evaluate(xi)));
    } else {
      const auto* t = model.two_stage();
      for (const auto& xi : t->samples) {
        const RecourseResult rr = recourse_value(*t, x, xi);
        if (rr.status == conic::LpStatus::Optimal) m = std::max(m, std::abs(rr.value));
      }
    }
  }
  return m;
}

}  // namespace detail

// Minimizes f(x) + lambda r^p + (1/N) sum_i inner_i(x, lambda) over X x [lambda_min, lambda_max].
// The multiplier is handled as t = lambda r^p.
inline WdroResult solve_wdro(const RelaxationModel& model, double r, const WdroOptions& opt = {}) {
  if (!(r > 0.0)) throw std::invalid_argument("solve_wdro: radius must be positive");
  const std::size_t n1 = model.decision_dim();
  const double rp = std::pow(r, model.p());
  WdroResult res;
  double t_max = opt.lambda_max ? *opt.lambda_max * rp : 10.0 * (1.0 + detail::max_abs_sample_cost(model));

  auto oracle = [&](const Eigen::VectorXd& z) {
    const Eigen::VectorXd x = z.head(static_cast<Eigen::Index>(n1));
    const double lambda = z(static_cast<Eigen::Index>(n1)) / rp;
    const VfResult v = v_form(model, x, lambda, r, opt.sdp, opt.threads);
    res.inner_solves += static_cast<int>(model.sample_count());
    if (v.status != conic::SolveStatus::Optimal) {
      throw InnerProblemError(v.status, v.failed_sample, lambda, v.inner[v.failed_sample].solution.message);
    }
    std::vector<Tms> ys;
    ys.reserve(v.inner.size());
    for (const auto& in : v.inner) ys.push_back(in.y);
    Eigen::VectorXd g = subgradient(model, x, r, ys);
    g(static_cast<Eigen::Index>(n1)) /= rp;  // d/dt = (d/dlambda) / r^p
    return OracleResult{model.f_value(x) + v.value, g};
  };

  Eigen::VectorXd z0(static_cast<Eigen::Index>(n1 + 1));
  z0.head(static_cast<Eigen::Index>(n1)) = 0.5 * (model.lo() + model.hi());
  z0(static_cast<Eigen::Index>(n1)) = 0.5 * t_max;
  for (int attempt = 0;; ++attempt) {
    const double t_min = model.support_bounded() ? 0.0 : 1e-6 * t_max;
    Eigen::VectorXd lo(static_cast<Eigen::Index>(n1 + 1)), hi(static_cast<Eigen::Index>(n1 + 1));
    lo << model.lo(), t_min;
    hi << model.hi(), t_max;
    z0(static_cast<Eigen::Index>(n1)) = std::clamp(z0(static_cast<Eigen::Index>(n1)), t_min, t_max);
    const BundleResult br = level_bundle_minimize(oracle, lo, hi, z0, opt.bundle);
    res.x = br.z.head(static_cast<Eigen::Index>(n1));
    res.lambda = br.z(static_cast<Eigen::Index>(n1)) / rp;
    res.value = br.value;
    res.lower = br.lower;
    res.iterations += br.iterations;
    res.converged = br.converged;
    res.lambda_max = t_max / rp;
    res.log.clear();
    for (auto e : br.log) {
      e.z(static_cast<Eigen::Index>(n1)) /= rp;
      res.log.push_back(std::move(e));
    }
    const bool at_cap = br.z(static_cast<Eigen::Index>(n1)) >= t_max * (1.0 - 1e-3);
    if (!at_cap) break;
    if (attempt >= opt.max_cap_doublings) {
      res.warnings.push_back("lambda reached the cap after the allowed doublings");
      break;
    }
    res.warnings.push_back("lambda reached the cap; doubling it");
    if (opt.verbose) std::fprintf(stderr, "solve_wdro: lambda at cap %.6g, doubling\n", t_max / rp);
    t_max *= 2.0;
    res.cap_doublings += 1;
    z0 = br.z;
  }
  if (!res.converged) res.warnings.push_back("bundle method stopped at the iteration limit");
  return res;
}

struct EsoResult {
  Eigen::VectorXd x;
  double value = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> sample_values;  // F(x*, xi_i) or recourse values at x*
  int iterations = 0;
};

// Sample-average problem for a single-stage instance, by the bundle method.
inline EsoResult solve_eso(const SingleStageInstance& inst, const BundleOptions& opt = {}) {
  inst.validate();
  const double invN = 1.0 / static_cast<double>(inst.samples.size());
  std::vector<Polynomial> Fs;  // F(., xi_i) in x
  for (const auto& xi : inst.samples) {
    // F(x, xi) with xi fixed: swap blocks by evaluating the xi part.
    Polynomial Fi(inst.n1);
    for (const auto& [a, c] : inst.F.terms()) {
      double v = c;
      for (std::size_t j = 0; j < inst.n0; ++j) v *= std::pow(xi(static_cast<Eigen::Index>(j)), a[inst.n1 + j]);
      std::vector<int> e(a.exponents().begin(), a.exponents().begin() + static_cast<std::ptrdiff_t>(inst.n1));
      Fi.add_term(MultiIndex(std::move(e)), v);
    }
    Fs.push_back(std::move(Fi));
  }
  Polynomial avg = inst.f;
  for (const auto& Fi : Fs) avg += Fi * invN;
  auto oracle = [&](const Eigen::VectorXd& x) { return OracleResult{avg.evaluate(x), gradient(avg, x)}; };
  const BundleResult br = level_bundle_minimize(oracle, inst.lo, inst.hi, 0.5 * (inst.lo + inst.hi), opt);
  EsoResult res;
  res.x = br.z;
  res.value = br.value;
  res.iterations = br.iterations;
  for (const auto& Fi : Fs) res.sample_values.push_back(Fi.evaluate(res.x));
  return res;
}

// Deterministic equivalent for a two-stage instance with affine f: one LP with
// the shared decision and N recourse blocks.
inline EsoResult solve_eso(const TwoStageInstance& inst, const BundleOptions& opt = {}) {
  inst.validate();
  const std::size_t N = inst.samples.size();
  const double invN = 1.0 / static_cast<double>(N);
  EsoResult res;
  if (inst.f.degree() > 1) {
    auto oracle = [&](const Eigen::VectorXd& x) {
      OracleResult o{inst.f.evaluate(x), gradient(inst.f, x)};
      for (std::size_t i = 0; i < N; ++i) {
        const RecourseResult rr = recourse_value(inst, x, inst.samples[i]);
        if (rr.status != conic::LpStatus::Optimal) {
          throw std::runtime_error("solve_eso: recourse LP " + std::string(conic::to_string(rr.status)) + " at sample " +
                                   std::to_string(i + 1));
        }
        o.value += invN * rr.value;
        o.subgradient += invN * (evaluate_B(inst, inst.samples[i]).transpose() * rr.u);
      }
      return o;
    };
    const BundleResult br = level_bundle_minimize(oracle, inst.lo, inst.hi, 0.5 * (inst.lo + inst.hi), opt);
    res.x = br.z;
    res.value = br.value;
    res.iterations = br.iterations;
  } else {
    const auto n1 = static_cast<Eigen::Index>(inst.n1);
    const auto n2 = static_cast<Eigen::Index>(inst.n2);
    const auto m2 = static_cast<Eigen::Index>(inst.m2);
    const auto Nn = static_cast<Eigen::Index>(N);
    // Columns: xt = x - lo (n1), box slacks (n1), x'_i (m2 each).
    const Eigen::Index cols = 2 * n1 + Nn * m2;
    const Eigen::Index rows = n1 + Nn * n2;
    conic::LinearProgram lp;
    lp.A = Eigen::MatrixXd::Zero(rows, cols);
    lp.rhs = Eigen::VectorXd::Zero(rows);
    lp.c = Eigen::VectorXd::Zero(cols);
    const Eigen::VectorXd gf = gradient(inst.f, inst.lo);
    lp.c.head(n1) = gf;
    double constant = inst.f.evaluate(inst.lo);
    for (Eigen::Index j = 0; j < n1; ++j) {
      lp.A(j, j) = 1.0;
      lp.A(j, n1 + j) = 1.0;
      lp.rhs(j) = inst.hi(j) - inst.lo(j);
    }
    for (Eigen::Index i = 0; i < Nn; ++i) {
      const Eigen::VectorXd& xi = inst.samples[static_cast<std::size_t>(i)];
      const Eigen::MatrixXd Bm = evaluate_B(inst, xi);
      const Eigen::Index r0 = n1 + i * n2;
      const Eigen::Index c0 = 2 * n1 + i * m2;
      lp.A.block(r0, c0, n2, m2) = inst.A;
      lp.A.block(r0, 0, n2, n1) = -Bm;
      lp.rhs.segment(r0, n2) = Bm * inst.lo + evaluate_vector(inst.b, xi);
      lp.c.segment(c0, m2) = invN * evaluate_vector(inst.c, xi);
      constant += invN * inst.d.evaluate(xi);
    }
    const conic::LpSolution sol = conic::solve_lp(lp);
    if (sol.status != conic::LpStatus::Optimal) {
      throw std::runtime_error(std::string("solve_eso: deterministic equivalent ") + conic::to_string(sol.status));
    }
    res.x = inst.lo + sol.x.head(n1);
    res.value = sol.value + constant;
    res.iterations = sol.iterations;
  }
  for (const auto& xi : inst.samples) {
    const RecourseResult rr = recourse_value(inst, res.x, xi);
    if (rr.status != conic::LpStatus::Optimal) throw std::runtime_error("solve_eso: recourse LP failed at the solution");
    res.sample_values.push_back(rr.value);
  }
  return res;
}

}  // namespace wdro
