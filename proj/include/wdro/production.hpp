#pragma once

// Two-stage production benchmark: parameters, sampling of the uncertain data,
// conversion to a TwoStageInstance over the recourse dual, and out-of-sample
// evaluation through the primal recourse LP.
//
// The uncertainty is xi = (b, w) with b in [0, inf)^np the demands and w in
// [0, 1]^n1 one uniform coordinate per ingredient: perishable ingredients
// decay by B^p_t = Bbar w_t, the others sell at the salvage price
// c^q_t = cqbar_t w_t.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/distributions/normal.hpp>

#include "wdro/conic/lp.hpp"
#include "wdro/parallel.hpp"
#include "wdro/polybasis.hpp"
#include "wdro/relax.hpp"

namespace wdro::production {

struct ProductionConfig {
  std::size_t n1 = 0;  // ingredients
  std::size_t np = 0;  // products
  double D = 5.0;      // capacity
  double sigma = 0.1;  // lognormal scale of the demands
  double Bbar = 1.0;   // decay upper bound
  Eigen::VectorXd ci, cr, cp, cq_bar, b_bar;
  Eigen::MatrixXd Am;            // n1 x np, ingredient t per unit of product s
  std::vector<bool> perishable;  // n1
  // Demand box b_s <= factor * b_bar_s in the support; off by default.
  std::optional<double> demand_cap_factor;

  void validate() const {
    if (n1 < 2 || np < 2) throw std::invalid_argument("production: n1 and np must be at least 2");
    if (!(D > 0.0)) throw std::invalid_argument("production: capacity D must be positive");
    if (!(sigma > 0.0)) throw std::invalid_argument("production: sigma must be positive");
    if (!(Bbar > 0.0)) throw std::invalid_argument("production: Bbar must be positive");
    const auto a = static_cast<Eigen::Index>(n1), b = static_cast<Eigen::Index>(np);
    if (ci.size() != a || cr.size() != a || cq_bar.size() != a || cp.size() != b || b_bar.size() != b) {
      throw std::invalid_argument("production: price or demand vector has the wrong length");
    }
    if (Am.rows() != a || Am.cols() != b) throw std::invalid_argument("production: Am must be n1 x np");
    if (perishable.size() != n1) throw std::invalid_argument("production: perishable flags must have length n1");
    if ((b_bar.array() <= 0.0).any()) throw std::invalid_argument("production: mean demands must be positive");
    if ((cq_bar.array() < 0.0).any()) throw std::invalid_argument("production: salvage bounds must be nonnegative");
    if (demand_cap_factor && !(*demand_cap_factor > 0.0)) throw std::invalid_argument("production: demand cap must be positive");
  }

  std::size_t xi_dim() const { return np + n1; }
};

// Row t = 1 of Am has no s <= t - 1 entries and the denominator 10 (t - 1)
// vanishes; it uses 10 max(t - 1, 1), i.e. 9/10 throughout.
inline ProductionConfig default_config(std::size_t n1, std::size_t np, double D = 5.0, double sigma = 0.1) {
  ProductionConfig c;
  c.n1 = n1;
  c.np = np;
  c.D = D;
  c.sigma = sigma;
  c.Bbar = 1.0;
  if (n1 < 2 || np < 2) throw std::invalid_argument("production: n1 and np must be at least 2");
  const auto a = static_cast<Eigen::Index>(n1), b = static_cast<Eigen::Index>(np);
  c.ci.resize(a);
  c.cq_bar.resize(a);
  for (Eigen::Index t = 0; t < a; ++t) {
    const double frac = static_cast<double>(t) / static_cast<double>(n1 - 1);
    c.ci(t) = 2.0 + 3.0 * frac;
    c.cq_bar(t) = 5.0 - 3.0 * frac;
  }
  c.cr = 3.0 * c.ci;
  c.cp.resize(b);
  c.b_bar.resize(b);
  for (Eigen::Index s = 0; s < b; ++s) {
    const double frac = static_cast<double>(s) / static_cast<double>(np - 1);
    c.cp(s) = 10.0 - 4.0 * frac;
    c.b_bar(s) = 2.0 - frac;
  }
  c.Am.resize(a, b);
  for (Eigen::Index t = 0; t < a; ++t) {
    const double denom = 10.0 * static_cast<double>(std::max<Eigen::Index>(t, 1));  // 1-based t - 1
    for (Eigen::Index s = 0; s < b; ++s) c.Am(t, s) = (s <= t - 1 ? 1.0 : 9.0) / denom;
  }
  c.perishable.resize(n1);
  for (std::size_t t = 0; t < n1; ++t) c.perishable[t] = (t % 2 == 0);  // odd 1-based indices
  c.validate();
  return c;
}

struct UncertaintySample {
  Eigen::VectorXd b;        // demands, np
  Eigen::VectorXd decay;    // B^p_t, n1
  Eigen::VectorXd salvage;  // c^q_t, n1
  Eigen::VectorXd w;        // uniform coordinates, n1

  Eigen::VectorXd xi() const {
    Eigen::VectorXd v(b.size() + w.size());
    v << b, w;
    return v;
  }
};

inline UncertaintySample from_xi(const ProductionConfig& cfg, const Eigen::VectorXd& xi) {
  if (xi.size() != static_cast<Eigen::Index>(cfg.xi_dim())) throw std::invalid_argument("production: xi has the wrong length");
  UncertaintySample u;
  const auto np = static_cast<Eigen::Index>(cfg.np), n1 = static_cast<Eigen::Index>(cfg.n1);
  u.b = xi.head(np);
  u.w = xi.tail(n1);
  u.decay.resize(n1);
  u.salvage.resize(n1);
  for (Eigen::Index t = 0; t < n1; ++t) {
    const bool per = cfg.perishable[static_cast<std::size_t>(t)];
    u.decay(t) = per ? cfg.Bbar * u.w(t) : 1.0;
    u.salvage(t) = per ? cfg.cq_bar(t) : cfg.cq_bar(t) * u.w(t);
  }
  return u;
}

// splitmix64 step, used to derive one independent stream per sample index.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Uniform on the open interval (0, 1) from the top 53 bits.
inline double open_unit(std::mt19937_64& eng) { return (static_cast<double>(eng() >> 11) + 0.5) * 0x1.0p-53; }

// Sample `index` of the stream `seed`; independent of how many are drawn.
inline UncertaintySample sample_at(const ProductionConfig& cfg, std::uint64_t seed, std::uint64_t index) {
  std::uint64_t state = seed ^ (index * 0xD1B54A32D192ED03ULL);
  std::mt19937_64 eng(splitmix64(state));
  const boost::math::normal_distribution<double> normal;
  Eigen::VectorXd xi(static_cast<Eigen::Index>(cfg.xi_dim()));
  for (std::size_t s = 0; s < cfg.np; ++s) {
    const double z = boost::math::quantile(normal, open_unit(eng));
    xi(static_cast<Eigen::Index>(s)) = cfg.b_bar(static_cast<Eigen::Index>(s)) * std::exp(cfg.sigma * z);
  }
  for (std::size_t t = 0; t < cfg.n1; ++t) xi(static_cast<Eigen::Index>(cfg.np + t)) = open_unit(eng);
  return from_xi(cfg, xi);
}

inline std::vector<UncertaintySample> sample_uncertainty(const ProductionConfig& cfg, std::uint64_t seed, std::size_t count) {
  if (count < 1) throw std::invalid_argument("sample_uncertainty: count must be positive");
  cfg.validate();
  std::vector<UncertaintySample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(sample_at(cfg, seed, i));
  return out;
}

// Recourse dual: max -(B^p x, b)^T u  s.t.  G u >= rhs(xi), with the row blocks
// u1 >= c^q, -u1 >= -c^r, Am^T u1 + u2 >= c^p, u2 >= 0, -u2 >= -c^p.
inline Eigen::MatrixXd dual_matrix(const ProductionConfig& cfg) {
  const auto n1 = static_cast<Eigen::Index>(cfg.n1), np = static_cast<Eigen::Index>(cfg.np);
  Eigen::MatrixXd G = Eigen::MatrixXd::Zero(2 * n1 + 3 * np, n1 + np);
  G.block(0, 0, n1, n1).setIdentity();
  G.block(n1, 0, n1, n1) = -Eigen::MatrixXd::Identity(n1, n1);
  G.block(2 * n1, 0, np, n1) = cfg.Am.transpose();
  G.block(2 * n1, n1, np, np).setIdentity();
  G.block(2 * n1 + np, n1, np, np).setIdentity();
  G.block(2 * n1 + 2 * np, n1, np, np) = -Eigen::MatrixXd::Identity(np, np);
  return G;
}

// Bounds on the dual variables: c^q <= u1 <= c^r and 0 <= u2 <= c^p. The
// instance works in v = u / scale, so |v_l| <= 1 and |v|^2 <= n1 + np.
inline Eigen::VectorXd dual_scale(const ProductionConfig& cfg) {
  Eigen::VectorXd s(static_cast<Eigen::Index>(cfg.n1 + cfg.np));
  s << cfg.cr, cfg.cp;
  return s;
}

inline TwoStageInstance to_instance(const ProductionConfig& cfg, const std::vector<UncertaintySample>& samples) {
  cfg.validate();
  if (samples.empty()) throw std::invalid_argument("to_instance: samples must be nonempty");
  const std::size_t n1 = cfg.n1, np = cfg.np, n0 = cfg.xi_dim();
  const Eigen::MatrixXd G = dual_matrix(cfg);
  const Eigen::VectorXd scale = dual_scale(cfg);
  TwoStageInstance inst;
  inst.n1 = n1;
  inst.n0 = n0;
  inst.n2 = n1 + np;
  inst.m2 = static_cast<std::size_t>(G.rows());
  inst.A = -(scale.asDiagonal() * G.transpose());

  auto xi_var = [&](std::size_t j) { return Polynomial::variable(n0, j); };
  auto w_var = [&](std::size_t t) { return xi_var(np + t); };
  auto constant = [&](double v) { return Polynomial::constant(n0, v); };

  inst.c.reserve(inst.m2);  // c = -rhs
  for (std::size_t t = 0; t < n1; ++t) {
    const double cq = cfg.cq_bar(static_cast<Eigen::Index>(t));
    inst.c.push_back(cfg.perishable[t] ? constant(-cq) : w_var(t) * (-cq));
  }
  for (std::size_t t = 0; t < n1; ++t) inst.c.push_back(constant(cfg.cr(static_cast<Eigen::Index>(t))));
  for (std::size_t s = 0; s < np; ++s) inst.c.push_back(constant(-cfg.cp(static_cast<Eigen::Index>(s))));
  for (std::size_t s = 0; s < np; ++s) inst.c.push_back(constant(0.0));
  for (std::size_t s = 0; s < np; ++s) inst.c.push_back(constant(cfg.cp(static_cast<Eigen::Index>(s))));

  // B(xi) x + b(xi) = -scale * (B^p(xi) x, b(xi))
  inst.B.assign(inst.n2, std::vector<Polynomial>(n1, constant(0.0)));
  for (std::size_t t = 0; t < n1; ++t) {
    const double st = scale(static_cast<Eigen::Index>(t));
    inst.B[t][t] = cfg.perishable[t] ? w_var(t) * (-st * cfg.Bbar) : constant(-st);
  }
  inst.b.assign(inst.n2, constant(0.0));
  for (std::size_t s = 0; s < np; ++s) inst.b[n1 + s] = xi_var(s) * -scale(static_cast<Eigen::Index>(n1 + s));
  inst.d = constant(0.0);

  inst.f = Polynomial(n1);
  for (std::size_t t = 0; t < n1; ++t) inst.f += Polynomial::variable(n1, t) * cfg.ci(static_cast<Eigen::Index>(t));

  for (std::size_t s = 0; s < np; ++s) {
    if (cfg.demand_cap_factor) {
      const double cap = *cfg.demand_cap_factor * cfg.b_bar(static_cast<Eigen::Index>(s));
      inst.h.push_back(xi_var(s) * (constant(cap) - xi_var(s)));
    } else {
      inst.h.push_back(xi_var(s));
    }
  }
  for (std::size_t t = 0; t < n1; ++t) inst.h.push_back(w_var(t) * (constant(1.0) - w_var(t)));
  inst.support_bounded = cfg.demand_cap_factor.has_value();

  const std::size_t nv = n0 + inst.n2;
  Polynomial ball = Polynomial::constant(nv, static_cast<double>(inst.n2));
  for (std::size_t l = 0; l < inst.n2; ++l) {
    const Polynomial ul = Polynomial::variable(nv, n0 + l);
    ball -= ul * ul;
  }
  inst.extra.push_back(std::move(ball));

  for (const auto& s : samples) inst.samples.push_back(s.xi());
  inst.H = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(n0), static_cast<Eigen::Index>(n0));
  inst.p = 2;
  inst.lo = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n1));
  inst.hi = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(n1), cfg.D);
  inst.validate();
  return inst;
}

inline double first_stage_cost(const ProductionConfig& cfg, const Eigen::VectorXd& x) { return cfg.ci.dot(x); }

// Primal recourse LP over (x^p, x^q, x^r, demand slack):
//   min -c^p x^p - c^q x^q + c^r x^r
//   s.t. x^q_t - x^r_t + sum_s Am_ts x^p_s = B^p_t x_t,  x^p_s + slack_s = b_s.
inline conic::LpSolution recourse_primal(const ProductionConfig& cfg, const Eigen::VectorXd& x, const UncertaintySample& u) {
  const auto n1 = static_cast<Eigen::Index>(cfg.n1), np = static_cast<Eigen::Index>(cfg.np);
  if (x.size() != n1) throw std::invalid_argument("recourse_primal: decision has the wrong length");
  conic::LinearProgram lp;
  lp.A = Eigen::MatrixXd::Zero(n1 + np, 2 * np + 2 * n1);
  lp.rhs.resize(n1 + np);
  lp.c.resize(2 * np + 2 * n1);
  lp.c << -cfg.cp, -u.salvage, cfg.cr, Eigen::VectorXd::Zero(np);
  lp.A.block(0, 0, n1, np) = cfg.Am;
  lp.A.block(0, np, n1, n1).setIdentity();
  lp.A.block(0, np + n1, n1, n1) = -Eigen::MatrixXd::Identity(n1, n1);
  lp.A.block(n1, 0, np, np).setIdentity();
  lp.A.block(n1, np + 2 * n1, np, np).setIdentity();
  lp.rhs << u.decay.cwiseProduct(x), u.b;
  return conic::solve_lp(lp);
}

inline double recourse_cost(const ProductionConfig& cfg, const Eigen::VectorXd& x, const UncertaintySample& u) {
  const conic::LpSolution sol = recourse_primal(cfg, x, u);
  // x^p = x^r = 0, x^q = B^p x is always feasible and the objective is bounded
  // below on the demand box, so anything else is an internal error.
  if (sol.status != conic::LpStatus::Optimal) {
    throw std::logic_error(std::string("production recourse LP ") + conic::to_string(sol.status));
  }
  return sol.value;
}

struct OosStats {
  std::size_t count = 0;
  double mean = std::numeric_limits<double>::quiet_NaN();
  double median = std::numeric_limits<double>::quiet_NaN();
  double q10 = std::numeric_limits<double>::quiet_NaN();
  double q90 = std::numeric_limits<double>::quiet_NaN();
  double std = std::numeric_limits<double>::quiet_NaN();  // n - 1 denominator; 0 for one value
};

// Nearest-rank quantile: the ceil(q n)-th smallest value (rank at least 1).
inline double nearest_rank(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) throw std::invalid_argument("nearest_rank: no data");
  if (!(q > 0.0 && q <= 1.0)) throw std::invalid_argument("nearest_rank: q must lie in (0, 1]");
  const double n = static_cast<double>(sorted.size());
  auto rank = static_cast<std::size_t>(std::ceil(q * n - 1e-12));
  rank = std::clamp<std::size_t>(rank, 1, sorted.size());
  return sorted[rank - 1];
}

inline OosStats summarize(const std::vector<double>& values) {
  if (values.empty()) throw std::invalid_argument("summarize: no data");
  OosStats s;
  s.count = values.size();
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.std = values.size() > 1 ? std::sqrt(ss / static_cast<double>(values.size() - 1)) : 0.0;
  std::vector<double> sorted(values);
  std::sort(sorted.begin(), sorted.end());
  s.median = nearest_rank(sorted, 0.5);
  s.q10 = nearest_rank(sorted, 0.1);
  s.q90 = nearest_rank(sorted, 0.9);
  return s;
}

struct OosResult {
  OosStats stats;
  std::vector<double> values;  // f(x) + F(x, xi_j), in sample order
};

inline OosResult evaluate_out_of_sample(const ProductionConfig& cfg, const Eigen::VectorXd& x, std::uint64_t eval_seed,
                                        std::size_t count, std::size_t threads = 1) {
  if (count < 1) throw std::invalid_argument("evaluate_out_of_sample: count must be positive");
  cfg.validate();
  if (x.size() != static_cast<Eigen::Index>(cfg.n1)) throw std::invalid_argument("evaluate_out_of_sample: decision has the wrong length");
  OosResult res;
  res.values.resize(count);
  const double f = first_stage_cost(cfg, x);
  parallel_for(count, threads, [&](std::size_t j) { res.values[j] = f + recourse_cost(cfg, x, sample_at(cfg, eval_seed, j)); });
  res.stats = summarize(res.values);
  return res;
}

}  // namespace wdro::production
