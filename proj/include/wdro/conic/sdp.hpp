#pragma once

// Dense primal-dual interior-point solver for moment programs
//
//   maximize  c^T y   s.t.  y_j = 1 (j normalized),
//                           L_b(y) PSD for every placed localizer block,
//                           a_l^T y <= b_l.
//
// The program is handled in the LMI form  S = C + sum_i y_i F_i  over the
// free entries of y and solved through a homogeneous self-dual embedding with
// Nesterov-Todd scaling and a Mehrotra predictor-corrector. 1x1 blocks and the
// scalar inequalities are treated as a nonnegative orthant.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "wdro/moments.hpp"

namespace wdro::conic {

struct PlacedBlock {
  std::shared_ptr<const LocalizerTemplate> block;
  std::size_t offset = 0;  // position of the template's basis inside y
};

struct LinearInequality {
  std::vector<std::pair<std::size_t, double>> a;  // sparse a
  double b = 0.0;                                 // a^T y <= b
};

struct ConicProgram {
  std::size_t dimension = 0;
  Eigen::VectorXd objective;  // maximize objective^T y
  std::vector<std::size_t> normalized;
  std::vector<PlacedBlock> psd_blocks;
  std::vector<LinearInequality> linear_ineqs;

  void validate() const {
    if (static_cast<std::size_t>(objective.size()) != dimension) {
      throw std::invalid_argument("ConicProgram: objective length differs from dimension");
    }
    for (auto j : normalized) {
      if (j >= dimension) throw std::invalid_argument("ConicProgram: normalization index out of range");
    }
    for (const auto& pb : psd_blocks) {
      if (!pb.block) throw std::invalid_argument("ConicProgram: null block");
      if (pb.offset + pb.block->basis()->size() > dimension) {
        throw std::invalid_argument("ConicProgram: block references entries outside y");
      }
    }
    for (const auto& li : linear_ineqs) {
      for (const auto& [j, v] : li.a) {
        if (j >= dimension) throw std::invalid_argument("ConicProgram: inequality index out of range");
      }
    }
  }
};

enum class SolveStatus { Optimal, Unbounded, Infeasible, NumericalFailure };

inline const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::Optimal: return "optimal";
    case SolveStatus::Unbounded: return "unbounded";
    case SolveStatus::Infeasible: return "infeasible";
    case SolveStatus::NumericalFailure: return "numerical_failure";
  }
  return "unknown";
}

struct KktResiduals {
  double primal = std::numeric_limits<double>::infinity();  // block feasibility of y
  double dual = std::numeric_limits<double>::infinity();    // multiplier equations
  double gap = std::numeric_limits<double>::infinity();     // relative duality gap
  double max() const { return std::max({primal, dual, gap}); }
};

struct ConicSolution {
  SolveStatus status = SolveStatus::NumericalFailure;
  Eigen::VectorXd y;  // full length, normalized entries equal 1
  double objective = std::numeric_limits<double>::quiet_NaN();
  double dual_objective = std::numeric_limits<double>::quiet_NaN();
  std::vector<Eigen::MatrixXd> block_duals;  // aligned with psd_blocks
  Eigen::VectorXd ineq_duals;                // aligned with linear_ineqs
  KktResiduals residuals;
  // Unbounded: improving direction d (objective^T d = 1, normalized entries 0)
  // with blocks PSD along d up to ray_violation (per unit objective gain) and
  // ray_relative_violation (relative to the block values along d).
  // Infeasible: block_duals / ineq_duals hold the dual improving ray.
  Eigen::VectorXd ray;
  double ray_violation = std::numeric_limits<double>::infinity();
  double ray_relative_violation = std::numeric_limits<double>::infinity();
  int iterations = 0;
  std::string message;
};

struct SdpOptions {
  double tol = 1e-8;
  int max_iters = 200;
  double certificate_ratio = 1e-6;  // tau/kappa threshold for the certificate branch
  // Largest relative ray violation (negative eigenvalue over the norm of the
  // block values along the ray) accepted in the certificate branch. After a
  // stall a ray must instead meet tol per unit gain; 0 disables that search.
  double ray_tol = 1e-9;
  // When progress stops short of tol, the best iterate is still reported
  // optimal if all its residuals are within this bound.
  double stall_tol = 1e-6;
  std::optional<Eigen::VectorXd> warm_start;
  bool verbose = false;
};

namespace detail {

struct SymTerm {
  int r;
  int c;
  double v;
};

struct Block {
  int dim = 0;
  Eigen::MatrixXd C;
  std::vector<int> vars;
  std::vector<std::vector<SymTerm>> F;  // aligned with vars
  int source = -1;                      // index into psd_blocks
};

struct LinRow {
  double c = 0.0;
  std::vector<std::pair<int, double>> a;
  int source = -1;       // psd block index for 1x1 blocks, else -1
  int ineq_source = -1;  // linear inequality index, else -1
};

struct Lmi {
  int m = 0;
  Eigen::VectorXd b;
  double offset = 0.0;
  std::vector<Block> blocks;
  std::vector<LinRow> lin;
  std::vector<int> var_of;    // y index -> free variable id or -1
  std::vector<std::size_t> index_of;  // free variable id -> y index
  double normC = 0.0;
  double normb = 0.0;
  std::size_t dimension = 0;  // length of the full y
  std::size_t n_psd = 0;
  std::size_t n_ineq = 0;
};

inline Lmi compile(const ConicProgram& prog) {
  prog.validate();
  Lmi L;
  const std::size_t n = prog.dimension;
  L.dimension = n;
  L.n_psd = prog.psd_blocks.size();
  L.n_ineq = prog.linear_ineqs.size();
  std::vector<char> fixed(n, 0);
  for (auto j : prog.normalized) fixed[j] = 1;
  L.var_of.assign(n, -1);
  for (std::size_t j = 0; j < n; ++j) {
    if (!fixed[j]) {
      L.var_of[j] = static_cast<int>(L.index_of.size());
      L.index_of.push_back(j);
    }
  }
  L.m = static_cast<int>(L.index_of.size());
  L.b.resize(L.m);
  for (int i = 0; i < L.m; ++i) L.b(i) = prog.objective(static_cast<Eigen::Index>(L.index_of[i]));
  for (std::size_t j = 0; j < n; ++j) {
    if (fixed[j]) L.offset += prog.objective(static_cast<Eigen::Index>(j));
  }

  for (std::size_t bi = 0; bi < prog.psd_blocks.size(); ++bi) {
    const auto& pb = prog.psd_blocks[bi];
    const auto& tmpl = *pb.block;
    if (tmpl.dim() == 1) {
      LinRow row;
      row.source = static_cast<int>(bi);
      std::map<int, double> acc;
      for (const auto& t : tmpl.entries().front().terms) {
        const std::size_t g = pb.offset + t.index;
        if (fixed[g]) {
          row.c += t.coef;
        } else {
          acc[L.var_of[g]] += t.coef;
        }
      }
      for (auto [v, c] : acc) {
        if (c != 0.0) row.a.emplace_back(v, c);
      }
      L.lin.push_back(std::move(row));
      continue;
    }
    Block blk;
    blk.dim = tmpl.dim();
    blk.source = static_cast<int>(bi);
    blk.C = Eigen::MatrixXd::Zero(blk.dim, blk.dim);
    std::map<int, std::vector<SymTerm>> per_var;
    for (const auto& e : tmpl.entries()) {
      for (const auto& t : e.terms) {
        const std::size_t g = pb.offset + t.index;
        if (fixed[g]) {
          blk.C(e.row, e.col) += t.coef;
          if (e.row != e.col) blk.C(e.col, e.row) += t.coef;
        } else {
          auto& lst = per_var[L.var_of[g]];
          lst.push_back({e.row, e.col, t.coef});
        }
      }
    }
    for (auto& [v, lst] : per_var) {
      blk.vars.push_back(v);
      blk.F.push_back(std::move(lst));
    }
    L.blocks.push_back(std::move(blk));
  }
  for (std::size_t li = 0; li < prog.linear_ineqs.size(); ++li) {
    const auto& ineq = prog.linear_ineqs[li];
    LinRow row;
    row.ineq_source = static_cast<int>(li);
    row.c = ineq.b;
    std::map<int, double> acc;
    for (const auto& [j, v] : ineq.a) {
      if (fixed[j]) {
        row.c -= v;
      } else {
        acc[L.var_of[j]] -= v;
      }
    }
    for (auto [v, c] : acc) {
      if (c != 0.0) row.a.emplace_back(v, c);
    }
    L.lin.push_back(std::move(row));
  }
  double nc = 0.0;
  for (const auto& blk : L.blocks) nc += blk.C.squaredNorm();
  for (const auto& row : L.lin) nc += row.c * row.c;
  L.normC = std::sqrt(nc);
  L.normb = L.b.norm();
  return L;
}

// Block-structured symmetric "vectors" of the cone.
struct ConeVec {
  std::vector<Eigen::MatrixXd> mats;
  Eigen::VectorXd lin;
};

inline ConeVec cone_zero(const Lmi& L) {
  ConeVec v;
  for (const auto& b : L.blocks) v.mats.push_back(Eigen::MatrixXd::Zero(b.dim, b.dim));
  v.lin = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(L.lin.size()));
  return v;
}
inline ConeVec cone_identity(const Lmi& L) {
  ConeVec v;
  for (const auto& b : L.blocks) v.mats.push_back(Eigen::MatrixXd::Identity(b.dim, b.dim));
  v.lin = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(L.lin.size()));
  return v;
}
inline ConeVec cone_constant(const Lmi& L) {
  ConeVec v;
  for (const auto& b : L.blocks) v.mats.push_back(b.C);
  v.lin.resize(static_cast<Eigen::Index>(L.lin.size()));
  for (std::size_t l = 0; l < L.lin.size(); ++l) v.lin(static_cast<Eigen::Index>(l)) = L.lin[l].c;
  return v;
}
inline double inner(const ConeVec& a, const ConeVec& b) {
  double s = a.lin.dot(b.lin);
  for (std::size_t i = 0; i < a.mats.size(); ++i) s += (a.mats[i].array() * b.mats[i].array()).sum();
  return s;
}
inline double norm(const ConeVec& a) { return std::sqrt(inner(a, a)); }
inline void axpy(double alpha, const ConeVec& x, ConeVec& y) {
  for (std::size_t i = 0; i < y.mats.size(); ++i) y.mats[i] += alpha * x.mats[i];
  y.lin += alpha * x.lin;
}
inline ConeVec combine(double a, const ConeVec& x, double b, const ConeVec& y) {
  ConeVec r;
  for (std::size_t i = 0; i < x.mats.size(); ++i) r.mats.push_back(a * x.mats[i] + b * y.mats[i]);
  r.lin = a * x.lin + b * y.lin;
  return r;
}

// sum_i y_i F_i (no constant)
inline ConeVec apply_F(const Lmi& L, const Eigen::VectorXd& y) {
  ConeVec out = cone_zero(L);
  for (std::size_t bi = 0; bi < L.blocks.size(); ++bi) {
    const auto& b = L.blocks[bi];
    auto& M = out.mats[bi];
    for (std::size_t j = 0; j < b.vars.size(); ++j) {
      const double yj = y(b.vars[j]);
      if (yj == 0.0) continue;
      for (const auto& t : b.F[j]) {
        M(t.r, t.c) += yj * t.v;
        if (t.r != t.c) M(t.c, t.r) += yj * t.v;
      }
    }
  }
  for (std::size_t l = 0; l < L.lin.size(); ++l) {
    double s = 0.0;
    for (const auto& [v, a] : L.lin[l].a) s += a * y(v);
    out.lin(static_cast<Eigen::Index>(l)) = s;
  }
  return out;
}

// Adjoint: (F^*(X))_i = sum_b <F_{b,i}, X_b> + sum_l a_{l,i} x_l
inline Eigen::VectorXd apply_Fadj(const Lmi& L, const ConeVec& X) {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(L.m);
  for (std::size_t bi = 0; bi < L.blocks.size(); ++bi) {
    const auto& b = L.blocks[bi];
    const auto& M = X.mats[bi];
    for (std::size_t j = 0; j < b.vars.size(); ++j) {
      double s = 0.0;
      for (const auto& t : b.F[j]) s += t.v * (t.r == t.c ? M(t.r, t.c) : M(t.r, t.c) + M(t.c, t.r));
      out(b.vars[j]) += s;
    }
  }
  for (std::size_t l = 0; l < L.lin.size(); ++l) {
    const double x = X.lin(static_cast<Eigen::Index>(l));
    for (const auto& [v, a] : L.lin[l].a) out(v) += a * x;
  }
  return out;
}

inline double min_eig(const Eigen::MatrixXd& M) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(M, Eigen::EigenvaluesOnly);
  return es.eigenvalues()(0);
}

// Largest alpha in (0, inf] with v + alpha dv inside the cone, given the
// scaled point Lambda (diagonal) and scaled direction.
inline double max_step_scaled(const std::vector<Eigen::VectorXd>& lam, const std::vector<Eigen::MatrixXd>& d,
                              const Eigen::VectorXd& laml, const Eigen::VectorXd& dl) {
  double alpha = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < lam.size(); ++i) {
    Eigen::VectorXd is = lam[i].cwiseSqrt().cwiseInverse();
    Eigen::MatrixXd Z = is.asDiagonal() * d[i] * is.asDiagonal();
    Z = 0.5 * (Z + Z.transpose());
    double me = min_eig(Z);
    if (me < 0) alpha = std::min(alpha, -1.0 / me);
  }
  for (Eigen::Index l = 0; l < laml.size(); ++l) {
    if (dl(l) < 0) alpha = std::min(alpha, -laml(l) / dl(l));
  }
  return alpha;
}

struct RayQuality {
  double per_gain;  // largest negative eigenvalue of F(d) per unit b^T d
  double relative;  // the same relative to the norm of F(d)
};

inline RayQuality ray_quality(const ConeVec& Fd, double gain) {
  double viol = 0.0;
  for (const auto& m : Fd.mats) viol = std::max(viol, -min_eig(m));
  for (Eigen::Index l = 0; l < Fd.lin.size(); ++l) viol = std::max(viol, -Fd.lin(l));
  const double nrm = norm(Fd);
  RayQuality q;
  q.per_gain = gain > 0.0 ? viol / gain : std::numeric_limits<double>::infinity();
  q.relative = nrm > 0.0 ? viol / nrm : std::numeric_limits<double>::infinity();
  return q;
}

struct Scaling {
  std::vector<Eigen::MatrixXd> R, Rinv, W, Winv;
  std::vector<Eigen::VectorXd> lam;
  Eigen::VectorXd wl, laml;
};

inline bool compute_scaling(const ConeVec& X, const ConeVec& S, Scaling& sc) {
  const std::size_t nb = X.mats.size();
  sc.R.resize(nb);
  sc.Rinv.resize(nb);
  sc.W.resize(nb);
  sc.Winv.resize(nb);
  sc.lam.resize(nb);
  for (std::size_t i = 0; i < nb; ++i) {
    Eigen::LLT<Eigen::MatrixXd> c1(X.mats[i]);
    Eigen::LLT<Eigen::MatrixXd> c2(S.mats[i]);
    if (c1.info() != Eigen::Success || c2.info() != Eigen::Success) return false;
    Eigen::MatrixXd L1 = c1.matrixL();
    Eigen::MatrixXd L2 = c2.matrixL();
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(L2.transpose() * L1, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::VectorXd sig = svd.singularValues();
    if (sig.minCoeff() <= 0.0 || !std::isfinite(sig.maxCoeff())) return false;
    Eigen::VectorXd is = sig.cwiseSqrt().cwiseInverse();
    sc.R[i] = L1 * svd.matrixV() * is.asDiagonal();
    sc.Rinv[i] = is.asDiagonal() * svd.matrixU().transpose() * L2.transpose();
    sc.W[i] = sc.R[i] * sc.R[i].transpose();
    sc.Winv[i] = sc.Rinv[i].transpose() * sc.Rinv[i];
    sc.lam[i] = sig;
  }
  if ((X.lin.array() <= 0).any() || (S.lin.array() <= 0).any()) return false;
  sc.wl = (X.lin.array() / S.lin.array()).sqrt().matrix();
  sc.laml = (X.lin.array() * S.lin.array()).sqrt().matrix();
  return true;
}

// Lambda-inverse of a symmetric V: solves (Lambda D + D Lambda)/2 = V.
inline Eigen::MatrixXd lambda_solve(const Eigen::VectorXd& lam, const Eigen::MatrixXd& V) {
  Eigen::MatrixXd D(V.rows(), V.cols());
  for (Eigen::Index i = 0; i < V.rows(); ++i) {
    for (Eigen::Index j = 0; j < V.cols(); ++j) D(i, j) = 2.0 * V(i, j) / (lam(i) + lam(j));
  }
  return D;
}

struct Direction {
  Eigen::VectorXd dy;
  ConeVec dX, dS;
  double dtau = 0.0, dkappa = 0.0;
  std::vector<Eigen::MatrixXd> dXs, dSs;  // scaled
  Eigen::VectorXd dxl_s, dsl_s;
};

class Solver {
 public:
  Solver(const Lmi& L, const SdpOptions& opt) : L_(L), opt_(opt) {}

  ConicSolution run();

 private:
  // W V W per block; w^2 v on the orthant.
  ConeVec wvw(const ConeVec& V) const {
    ConeVec r;
    for (std::size_t i = 0; i < V.mats.size(); ++i) {
      Eigen::MatrixXd m = sc_.W[i] * V.mats[i] * sc_.W[i];
      r.mats.push_back(0.5 * (m + m.transpose()));
    }
    r.lin = sc_.wl.array().square().matrix().cwiseProduct(V.lin);
    return r;
  }

  void build_schur() {
    M_.setZero(L_.m, L_.m);
    for (std::size_t bi = 0; bi < L_.blocks.size(); ++bi) {
      const auto& b = L_.blocks[bi];
      const auto& W = sc_.W[bi];
      const std::size_t nv = b.vars.size();
      std::vector<Eigen::MatrixXd> G(nv);
      for (std::size_t j = 0; j < nv; ++j) {
        Eigen::MatrixXd g = Eigen::MatrixXd::Zero(b.dim, b.dim);
        for (const auto& t : b.F[j]) {
          g.noalias() += t.v * W.col(t.r) * W.row(t.c);
          if (t.r != t.c) g.noalias() += t.v * W.col(t.c) * W.row(t.r);
        }
        G[j] = std::move(g);
      }
      for (std::size_t i = 0; i < nv; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
          const auto& Gj = G[j];
          double s = 0.0;
          for (const auto& t : b.F[i]) s += t.v * (t.r == t.c ? Gj(t.r, t.c) : Gj(t.r, t.c) + Gj(t.c, t.r));
          M_(b.vars[i], b.vars[j]) += s;
          if (i != j) M_(b.vars[j], b.vars[i]) += s;
        }
      }
    }
    for (std::size_t l = 0; l < L_.lin.size(); ++l) {
      const double w2 = sc_.wl(static_cast<Eigen::Index>(l)) * sc_.wl(static_cast<Eigen::Index>(l));
      const auto& a = L_.lin[l].a;
      for (const auto& [vi, ai] : a) {
        for (const auto& [vj, aj] : a) M_(vi, vj) += w2 * ai * aj;
      }
    }
  }

  bool factor_schur() {
    double maxdiag = M_.diagonal().cwiseAbs().maxCoeff();
    if (!std::isfinite(maxdiag)) return false;
    llt_.compute(M_);
    if (llt_.info() == Eigen::Success) return true;
    double delta = 1e-14 * std::max(1.0, maxdiag);
    for (int attempt = 0; attempt < 8; ++attempt) {
      Eigen::MatrixXd Mr = M_;
      Mr.diagonal().array() += delta;
      llt_.compute(Mr);
      if (llt_.info() == Eigen::Success) return true;
      delta *= 100.0;
    }
    return false;
  }

  Eigen::VectorXd schur_solve(const Eigen::VectorXd& rhs) const {
    Eigen::VectorXd x = llt_.solve(rhs);
    // One step of iterative refinement against the unregularized matrix.
    Eigen::VectorXd r = rhs - M_ * x;
    x += llt_.solve(r);
    return x;
  }

  Direction solve_direction_once(const Eigen::VectorXd& e1, const ConeVec& e2, double e3,
                                 const std::vector<Eigen::MatrixXd>& e4, const Eigen::VectorXd& e4l, double e5) const;
  Direction solve_direction(const Eigen::VectorXd& e1, const ConeVec& e2, double e3,
                            const std::vector<Eigen::MatrixXd>& e4, const Eigen::VectorXd& e4l, double e5) const;
  void rescale_direction(Direction& d) const;

  const Lmi& L_;
  SdpOptions opt_;
  // iterate
  ConeVec X_, S_;
  Eigen::VectorXd y_;
  double tau_ = 1.0, kappa_ = 1.0;
  Scaling sc_;
  Eigen::MatrixXd M_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
  ConeVec Cc_;
  // q-system (independent of the right-hand side)
  Eigen::VectorXd q_;
  ConeVec dXq_;
};

inline Direction Solver::solve_direction_once(const Eigen::VectorXd& e1, const ConeVec& e2, double e3,
                                              const std::vector<Eigen::MatrixXd>& e4, const Eigen::VectorXd& e4l,
                                              double e5) const {
  const std::size_t nb = L_.blocks.size();
  // Dt = R^{-T} (Lambda-solve e4) R^{-1}
  ConeVec Dt;
  Dt.mats.resize(nb);
  for (std::size_t i = 0; i < nb; ++i) {
    Dt.mats[i] = sc_.Rinv[i].transpose() * lambda_solve(sc_.lam[i], e4[i]) * sc_.Rinv[i];
  }
  Dt.lin = (e4l.array() / sc_.laml.array() / sc_.wl.array()).matrix();
  ConeVec E = combine(1.0, e2, -1.0, Dt);
  ConeVec WEW = wvw(E);
  Eigen::VectorXd rhs = e1 - apply_Fadj(L_, WEW);
  Eigen::VectorXd p = schur_solve(rhs);
  ConeVec Fp = apply_F(L_, p);
  // dX_p = W(-F(p) - E)W
  ConeVec dXp = wvw(combine(-1.0, Fp, -1.0, E));

  const double num = e3 - e5 / tau_ - inner(Cc_, dXp) + L_.b.dot(p);
  const double den = inner(Cc_, dXq_) - L_.b.dot(q_) - kappa_ / tau_;
  Direction d;
  d.dtau = num / den;
  d.dy = p + d.dtau * q_;
  d.dX = combine(1.0, dXp, d.dtau, dXq_);
  // dS from the linear equation A^T dy + dS - C dtau = e2, which keeps the
  // residual updates exact instead of going through W^{-1} dX W^{-1}.
  d.dS = combine(1.0, e2, 1.0, apply_F(L_, d.dy));
  axpy(d.dtau, Cc_, d.dS);
  d.dkappa = (e5 - kappa_ * d.dtau) / tau_;
  rescale_direction(d);
  return d;
}

inline void Solver::rescale_direction(Direction& d) const {
  const std::size_t nb = L_.blocks.size();
  d.dXs.resize(nb);
  d.dSs.resize(nb);
  for (std::size_t i = 0; i < nb; ++i) {
    d.dXs[i] = sc_.Rinv[i] * d.dX.mats[i] * sc_.Rinv[i].transpose();
    d.dXs[i] = 0.5 * (d.dXs[i] + d.dXs[i].transpose());
    d.dSs[i] = sc_.R[i].transpose() * d.dS.mats[i] * sc_.R[i];
    d.dSs[i] = 0.5 * (d.dSs[i] + d.dSs[i].transpose());
  }
  d.dxl_s = (d.dX.lin.array() / sc_.wl.array()).matrix();
  d.dsl_s = (d.dS.lin.array() * sc_.wl.array()).matrix();
}

// Iterative refinement on the linear equations: near the optimum the Schur
// matrix is ill-conditioned and the first solve leaves a residual in
// -F^*(dX) - b dtau = e1 that would otherwise accumulate in the dual
// residual. Corrections keep the linearized complementarity equations
// homogeneous and are kept only while they reduce the residual.
inline Direction Solver::solve_direction(const Eigen::VectorXd& e1, const ConeVec& e2, double e3,
                                         const std::vector<Eigen::MatrixXd>& e4, const Eigen::VectorXd& e4l,
                                         double e5) const {
  Direction d = solve_direction_once(e1, e2, e3, e4, e4l, e5);
  const double scale = 1.0 + e1.norm() + std::abs(e3);
  std::vector<Eigen::MatrixXd> z4(e4.size());
  for (std::size_t i = 0; i < e4.size(); ++i) z4[i] = Eigen::MatrixXd::Zero(e4[i].rows(), e4[i].cols());
  const Eigen::VectorXd z4l = Eigen::VectorXd::Zero(e4l.size());
  auto residual = [&](const Direction& dd, Eigen::VectorXd& rho1, double& rho3) {
    rho1 = e1 + apply_Fadj(L_, dd.dX) + L_.b * dd.dtau;
    rho3 = e3 - (inner(Cc_, dd.dX) - L_.b.dot(dd.dy) + dd.dkappa);
    return rho1.norm() + std::abs(rho3);
  };
  Eigen::VectorXd rho1;
  double rho3 = 0.0;
  double err = residual(d, rho1, rho3);
  for (int round = 0; round < 4 && err > 1e-15 * scale; ++round) {
    const Direction c = solve_direction_once(rho1, cone_zero(L_), rho3, z4, z4l, 0.0);
    Direction t = d;
    t.dy += c.dy;
    axpy(1.0, c.dX, t.dX);
    axpy(1.0, c.dS, t.dS);
    t.dtau += c.dtau;
    t.dkappa += c.dkappa;
    Eigen::VectorXd r1;
    double r3 = 0.0;
    const double e = residual(t, r1, r3);
    if (!(e < 0.5 * err)) break;
    d = std::move(t);
    rho1 = std::move(r1);
    rho3 = r3;
    err = e;
  }
  rescale_direction(d);
  return d;
}

inline ConicSolution Solver::run() {
  ConicSolution sol;
  const std::size_t nb = L_.blocks.size();
  const std::size_t nl = L_.lin.size();
  const double nu = [&] {
    double s = static_cast<double>(nl);
    for (const auto& b : L_.blocks) s += b.dim;
    return s;
  }();
  Cc_ = cone_constant(L_);

  X_ = cone_identity(L_);
  S_ = cone_identity(L_);
  y_ = Eigen::VectorXd::Zero(L_.m);
  tau_ = 1.0;
  kappa_ = 1.0;
  if (opt_.warm_start) {
    const auto& w = *opt_.warm_start;
    if (static_cast<std::size_t>(w.size()) != L_.dimension) throw std::invalid_argument("warm start length mismatch");
    for (int i = 0; i < L_.m; ++i) y_(i) = w(static_cast<Eigen::Index>(L_.index_of[i]));
    ConeVec Sy = combine(1.0, Cc_, 1.0, apply_F(L_, y_));
    for (std::size_t i = 0; i < nb; ++i) {
      double me = min_eig(Sy.mats[i]);
      double shift = std::max(0.0, -me) + 1.0;
      S_.mats[i] = Sy.mats[i] + shift * Eigen::MatrixXd::Identity(L_.blocks[i].dim, L_.blocks[i].dim);
    }
    for (std::size_t l = 0; l < nl; ++l) {
      double v = Sy.lin(static_cast<Eigen::Index>(l));
      S_.lin(static_cast<Eigen::Index>(l)) = std::max(0.0, -v) + 1.0 + std::max(0.0, v);
    }
  }

  auto finalize_point = [&](SolveStatus st) {
    sol.status = st;
    sol.y = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(L_.dimension));
    for (int i = 0; i < L_.m; ++i) sol.y(static_cast<Eigen::Index>(L_.index_of[i])) = y_(i) / tau_;
    sol.objective = L_.b.dot(y_) / tau_ + L_.offset;
    sol.dual_objective = inner(Cc_, X_) / tau_ + L_.offset;
  };
  auto export_duals = [&](double scale) {
    sol.block_duals.assign(L_.n_psd, Eigen::MatrixXd());
    sol.ineq_duals = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(L_.n_ineq));
    for (std::size_t i = 0; i < nb; ++i) {
      if (L_.blocks[i].source >= 0) sol.block_duals[L_.blocks[i].source] = X_.mats[i] / scale;
    }
    for (std::size_t l = 0; l < nl; ++l) {
      const double v = X_.lin(static_cast<Eigen::Index>(l)) / scale;
      if (L_.lin[l].source >= 0) sol.block_duals[L_.lin[l].source] = Eigen::MatrixXd::Constant(1, 1, v);
      if (L_.lin[l].ineq_source >= 0) sol.ineq_duals(L_.lin[l].ineq_source) = v;
    }
  };

  struct Snapshot {
    ConeVec X, S;
    Eigen::VectorXd y;
    double tau = 0.0, kappa = 0.0;
    KktResiduals res;
    int iter = 0;
  };
  std::optional<Snapshot> best;

  int stall = 0;
  for (int iter = 0; iter <= opt_.max_iters; ++iter) {
    sol.iterations = iter;
    // residuals
    Eigen::VectorXd r1 = -apply_Fadj(L_, X_) - L_.b * tau_;
    ConeVec Fy = apply_F(L_, y_);
    ConeVec r2 = combine(1.0, S_, -1.0, Fy);
    axpy(-tau_, Cc_, r2);
    const double cx = inner(Cc_, X_);
    const double by = L_.b.dot(y_);
    const double r3 = cx - by + kappa_;
    const double mu = (inner(X_, S_) + tau_ * kappa_) / (nu + 1.0);

    KktResiduals res;
    res.primal = norm(r2) / tau_ / (1.0 + L_.normC);
    res.dual = r1.norm() / tau_ / (1.0 + L_.normb);
    const double pobj = by / tau_, dobj = cx / tau_;
    res.gap = std::abs(dobj - pobj) / (1.0 + std::abs(pobj + L_.offset));
    sol.residuals = res;
    if (opt_.verbose) {
      std::fprintf(stderr, "sdp %3d pobj %+.9e dobj %+.9e pres %.2e dres %.2e gap %.2e tau %.2e kappa %.2e mu %.2e\n",
                   iter, pobj + L_.offset, dobj + L_.offset, res.primal, res.dual, res.gap, tau_, kappa_, mu);
    }
    if (res.max() <= opt_.tol) {
      finalize_point(SolveStatus::Optimal);
      export_duals(tau_);
      return sol;
    }
    if (!best || res.max() < best->res.max()) best = Snapshot{X_, S_, y_, tau_, kappa_, res, iter};
    // Certificates, considered once tau has fallen below kappa. Unbounded
    // (primal max): d = y / b^T y with F(d) PSD.
    const bool certificate_branch = tau_ <= opt_.certificate_ratio * kappa_;
    if (by > 0.0 && tau_ <= kappa_) {
      const RayQuality q = ray_quality(Fy, by);
      if (q.per_gain <= opt_.tol || (certificate_branch && q.relative <= opt_.ray_tol)) {
        sol.status = SolveStatus::Unbounded;
        sol.ray = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(L_.dimension));
        for (int i = 0; i < L_.m; ++i) sol.ray(static_cast<Eigen::Index>(L_.index_of[i])) = y_(i) / by;
        sol.ray_violation = q.per_gain;
        sol.ray_relative_violation = q.relative;
        sol.objective = std::numeric_limits<double>::infinity();
        sol.message = "improving ray found";
        return sol;
      }
    }
    // Infeasible (primal max): X PSD with F^*(X) = 0 and <C, X> < 0.
    if (cx < 0.0 && tau_ <= kappa_) {
      const double viol = apply_Fadj(L_, X_).norm() / (-cx);
      if (viol <= opt_.tol || (certificate_branch && viol <= opt_.ray_tol)) {
        sol.status = SolveStatus::Infeasible;
        export_duals(-cx);
        sol.ray_violation = viol;
        sol.objective = -std::numeric_limits<double>::infinity();
        sol.message = "dual improving ray found";
        return sol;
      }
    }
    if (iter == opt_.max_iters) break;

    if (!compute_scaling(X_, S_, sc_)) {
      sol.message = "lost positive definiteness";
      break;
    }
    build_schur();
    if (!factor_schur()) {
      sol.message = "Schur complement factorization failed";
      break;
    }
    // q-system: M q = b + A(WCW) = b - F^*(WCW)
    q_ = schur_solve(L_.b - apply_Fadj(L_, wvw(Cc_)));
    dXq_ = wvw(combine(-1.0, apply_F(L_, q_), -1.0, Cc_));

    // Predictor
    std::vector<Eigen::MatrixXd> e4(nb);
    for (std::size_t i = 0; i < nb; ++i) e4[i] = -Eigen::MatrixXd(sc_.lam[i].array().square().matrix().asDiagonal());
    Eigen::VectorXd e4l = -sc_.laml.array().square().matrix();
    ConeVec mr2 = r2;
    for (auto& m : mr2.mats) m *= -1.0;
    mr2.lin *= -1.0;
    Direction da = solve_direction(-r1, mr2, -r3, e4, e4l, -tau_ * kappa_);
    double alpha_a = max_step_scaled(sc_.lam, da.dXs, sc_.laml, da.dxl_s);
    alpha_a = std::min(alpha_a, max_step_scaled(sc_.lam, da.dSs, sc_.laml, da.dsl_s));
    if (da.dtau < 0) alpha_a = std::min(alpha_a, -tau_ / da.dtau);
    if (da.dkappa < 0) alpha_a = std::min(alpha_a, -kappa_ / da.dkappa);
    alpha_a = std::min(alpha_a, 1.0);
    const double sigma = std::clamp(std::pow(1.0 - alpha_a, 3), 0.0, 1.0);
    const double eta = 1.0 - sigma;

    // Corrector
    for (std::size_t i = 0; i < nb; ++i) {
      Eigen::MatrixXd prod = 0.5 * (da.dXs[i] * da.dSs[i] + da.dSs[i] * da.dXs[i]);
      e4[i] = -Eigen::MatrixXd(sc_.lam[i].array().square().matrix().asDiagonal()) - prod;
      e4[i].diagonal().array() += sigma * mu;
    }
    e4l = (-sc_.laml.array().square() + sigma * mu - da.dxl_s.array() * da.dsl_s.array()).matrix();
    ConeVec er2 = r2;
    for (auto& m : er2.mats) m *= -eta;
    er2.lin *= -eta;
    const double e5 = -tau_ * kappa_ + sigma * mu - da.dtau * da.dkappa;
    Direction d = solve_direction(-eta * r1, er2, -eta * r3, e4, e4l, e5);
    double alpha = max_step_scaled(sc_.lam, d.dXs, sc_.laml, d.dxl_s);
    alpha = std::min(alpha, max_step_scaled(sc_.lam, d.dSs, sc_.laml, d.dsl_s));
    if (d.dtau < 0) alpha = std::min(alpha, -tau_ / d.dtau);
    if (d.dkappa < 0) alpha = std::min(alpha, -kappa_ / d.dkappa);
    alpha = std::min(1.0, 0.99 * alpha);
    if (!(alpha > 0.0) || !std::isfinite(alpha)) {
      sol.message = "invalid step length";
      break;
    }
    stall = alpha < 1e-8 ? stall + 1 : 0;
    if (stall >= 5) {
      sol.message = "step length stalled";
      break;
    }
    axpy(alpha, d.dX, X_);
    axpy(alpha, d.dS, S_);
    for (auto& m : X_.mats) m = 0.5 * (m + m.transpose());
    for (auto& m : S_.mats) m = 0.5 * (m + m.transpose());
    y_ += alpha * d.dy;
    tau_ += alpha * d.dtau;
    kappa_ += alpha * d.dkappa;
    // Rescale the embedding when tau and kappa both collapse or blow up; the
    // homogeneous system is invariant under positive scaling.
    const double s = std::max(tau_, kappa_);
    if (s > 1e8 || s < 1e-8) {
      const double f = 1.0 / s;
      for (auto& m : X_.mats) m *= f;
      for (auto& m : S_.mats) m *= f;
      X_.lin *= f;
      S_.lin *= f;
      y_ *= f;
      tau_ *= f;
      kappa_ *= f;
    }
  }
  if (sol.message.empty()) sol.message = "iteration limit reached";
  if (best && best->res.max() <= opt_.stall_tol) {
    X_ = std::move(best->X);
    S_ = std::move(best->S);
    y_ = std::move(best->y);
    tau_ = best->tau;
    kappa_ = best->kappa;
    sol.residuals = best->res;
    sol.iterations = best->iter;
    sol.message = "reduced accuracy: " + sol.message;
    finalize_point(SolveStatus::Optimal);
    export_duals(tau_);
    return sol;
  }
  finalize_point(SolveStatus::NumericalFailure);
  export_duals(tau_);
  return sol;
}

// Auxiliary program for a direction d (over the free entries) with
// b^T d >= 1 and every block of F(d) + delta I PSD, minimizing delta.
inline Lmi ray_problem(const Lmi& L) {
  Lmi A;
  A.m = L.m + 1;
  const int delta = L.m;
  A.b = Eigen::VectorXd::Zero(A.m);
  A.b(delta) = -1.0;
  for (const auto& b : L.blocks) {
    Block nb;
    nb.dim = b.dim;
    nb.C = Eigen::MatrixXd::Zero(b.dim, b.dim);
    nb.vars = b.vars;
    nb.F = b.F;
    nb.vars.push_back(delta);
    std::vector<SymTerm> id;
    for (int r = 0; r < b.dim; ++r) id.push_back({r, r, 1.0});
    nb.F.push_back(std::move(id));
    A.blocks.push_back(std::move(nb));
  }
  for (const auto& row : L.lin) {
    LinRow nr;
    nr.a = row.a;
    nr.a.emplace_back(delta, 1.0);
    A.lin.push_back(std::move(nr));
  }
  LinRow gain;
  gain.c = -1.0;
  for (int i = 0; i < L.m; ++i) {
    if (L.b(i) != 0.0) gain.a.emplace_back(i, L.b(i));
  }
  A.lin.push_back(std::move(gain));
  LinRow floor;
  floor.c = 1.0;
  floor.a.emplace_back(delta, 1.0);
  A.lin.push_back(std::move(floor));
  A.dimension = static_cast<std::size_t>(A.m);
  A.var_of.resize(A.dimension);
  for (int i = 0; i < A.m; ++i) {
    A.var_of[i] = i;
    A.index_of.push_back(static_cast<std::size_t>(i));
  }
  A.normC = std::sqrt(2.0);
  A.normb = 1.0;
  return A;
}

}  // namespace detail

inline ConicSolution solve_sdp(const ConicProgram& prog, const SdpOptions& opt = {}) {
  if (!(opt.tol >= 1e-10 && opt.tol <= 1e-4)) throw std::invalid_argument("solve_sdp: tol outside [1e-10, 1e-4]");
  detail::Lmi L = detail::compile(prog);
  ConicSolution sol = detail::Solver(L, opt).run();
  if (sol.status != SolveStatus::NumericalFailure || opt.ray_tol <= 0.0) return sol;

  // The embedding can stall when the dual side is only weakly infeasible.
  // Without the divergence evidence of the certificate branch, only a ray
  // with small violation per unit gain is accepted: a relatively small
  // violation is also found for bounded programs with large certificates.
  detail::Lmi R = detail::ray_problem(L);
  SdpOptions ro = opt;
  ro.warm_start.reset();
  ro.tol = 1e-10;
  ConicSolution rs = detail::Solver(R, ro).run();
  Eigen::VectorXd d = rs.y.head(L.m);
  const double gain = L.b.dot(d);
  const detail::RayQuality q = detail::ray_quality(detail::apply_F(L, d), gain);
  if (opt.verbose) {
    std::fprintf(stderr, "ray phase: status %s per-gain %.3e relative %.3e gain %.3e norm %.3e\n",
                 to_string(rs.status), q.per_gain, q.relative, gain, d.norm());
  }
  if (gain > 0.0 && q.per_gain <= opt.tol) {
    sol.status = SolveStatus::Unbounded;
    sol.ray = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(prog.dimension));
    for (int i = 0; i < L.m; ++i) sol.ray(static_cast<Eigen::Index>(L.index_of[i])) = d(i) / gain;
    sol.ray_violation = q.per_gain;
    sol.ray_relative_violation = q.relative;
    sol.objective = std::numeric_limits<double>::infinity();
    sol.message = "approximate improving ray found";
  }
  return sol;
}

// Block values and KKT quantities of a given y, for checks outside the solver.
inline double block_violation(const ConicProgram& prog, const Eigen::VectorXd& y) {
  double viol = 0.0;
  for (const auto& pb : prog.psd_blocks) {
    Eigen::VectorXd local = y.segment(static_cast<Eigen::Index>(pb.offset), static_cast<Eigen::Index>(pb.block->basis()->size()));
    viol = std::max(viol, -min_eigenvalue(pb.block->apply_values(local)));
  }
  for (const auto& li : prog.linear_ineqs) {
    double s = 0.0;
    for (const auto& [j, v] : li.a) s += v * y(static_cast<Eigen::Index>(j));
    viol = std::max(viol, s - li.b);
  }
  return viol;
}

// Minimum eigenvalue of the homogeneous part of each block along a ray.
inline double ray_block_violation(const ConicProgram& prog, const Eigen::VectorXd& d) {
  double viol = 0.0;
  for (const auto& pb : prog.psd_blocks) {
    Eigen::VectorXd local = d.segment(static_cast<Eigen::Index>(pb.offset), static_cast<Eigen::Index>(pb.block->basis()->size()));
    viol = std::max(viol, -min_eigenvalue(pb.block->apply_values(local)));
  }
  for (const auto& li : prog.linear_ineqs) {
    double s = 0.0;
    for (const auto& [j, v] : li.a) s += v * d(static_cast<Eigen::Index>(j));
    viol = std::max(viol, s);
  }
  return viol;
}

}  // namespace wdro::conic
