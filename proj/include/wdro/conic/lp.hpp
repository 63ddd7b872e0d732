#pragma once

// Revised simplex for  minimize c^T x  s.t.  A x = rhs, x >= 0,
// two-phase with Bland's rule throughout and an explicit basis inverse.

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

namespace wdro::conic {

struct LinearProgram {
  Eigen::MatrixXd A;
  Eigen::VectorXd rhs;
  Eigen::VectorXd c;

  void validate() const {
    if (A.rows() != rhs.size() || A.cols() != c.size()) throw std::invalid_argument("LinearProgram: dimension mismatch");
  }

  // maximize w^T u  s.t.  G u >= h  with u free, rewritten as
  // minimize -w^T (u+ - u-)  s.t.  G u+ - G u- - s = h.
  static LinearProgram from_inequality_form(const Eigen::MatrixXd& G, const Eigen::VectorXd& h, const Eigen::VectorXd& w) {
    if (G.rows() != h.size() || G.cols() != w.size()) throw std::invalid_argument("from_inequality_form: dimension mismatch");
    const Eigen::Index m = G.rows(), n = G.cols();
    LinearProgram lp;
    lp.A.resize(m, 2 * n + m);
    lp.A << G, -G, -Eigen::MatrixXd::Identity(m, m);
    lp.rhs = h;
    lp.c = Eigen::VectorXd::Zero(2 * n + m);
    lp.c.head(n) = -w;
    lp.c.segment(n, n) = w;
    return lp;
  }
  // Recovers u from a solution of the form above.
  static Eigen::VectorXd inequality_form_point(const Eigen::VectorXd& x, Eigen::Index n) {
    return x.head(n) - x.segment(n, n);
  }
};

enum class LpStatus { Optimal, Unbounded, Infeasible };

inline const char* to_string(LpStatus s) {
  switch (s) {
    case LpStatus::Optimal: return "optimal";
    case LpStatus::Unbounded: return "unbounded";
    case LpStatus::Infeasible: return "infeasible";
  }
  return "unknown";
}

struct LpSolution {
  LpStatus status = LpStatus::Infeasible;
  Eigen::VectorXd x;
  double value = std::numeric_limits<double>::quiet_NaN();
  Eigen::VectorXd duals;  // multipliers of A x = rhs: A^T duals <= c
  std::vector<int> basis;  // basic original columns (A_J invertible on the non-redundant rows)
  int iterations = 0;
  double primal_residual = 0.0;
  double dual_residual = 0.0;
  double gap = 0.0;
};

struct LpOptions {
  double feas_tol = 1e-9;
  double opt_tol = 1e-10;
  double pivot_tol = 1e-10;
  int refactor_every = 50;
  int max_iters = 0;  // 0: automatic
};

namespace detail {

class Simplex {
 public:
  Simplex(const LinearProgram& lp, const LpOptions& opt) : opt_(opt) {
    lp.validate();
    m_ = lp.A.rows();
    n_ = lp.A.cols();
    sign_ = Eigen::VectorXd::Ones(m_);
    b_ = lp.rhs;
    A_.resize(m_, n_ + m_);
    A_.leftCols(n_) = lp.A;
    for (Eigen::Index i = 0; i < m_; ++i) {
      if (b_(i) < 0) {
        sign_(i) = -1.0;
        b_(i) = -b_(i);
        A_.row(i).head(n_) *= -1.0;
      }
    }
    A_.rightCols(m_) = Eigen::MatrixXd::Identity(m_, m_);
    c_ = lp.c;
    scale_ = 1.0 + (lp.c.size() ? lp.c.cwiseAbs().maxCoeff() : 0.0);
  }

  LpSolution solve() {
    LpSolution sol;
    const int max_iters = opt_.max_iters > 0 ? opt_.max_iters : static_cast<int>(200 * (m_ + n_) + 1000);
    basis_.resize(m_);
    for (Eigen::Index i = 0; i < m_; ++i) basis_[i] = static_cast<int>(n_ + i);
    Binv_ = Eigen::MatrixXd::Identity(m_, m_);
    xB_ = b_;

    // Phase 1: minimize the sum of artificials.
    Eigen::VectorXd c1 = Eigen::VectorXd::Zero(n_ + m_);
    c1.tail(m_).setOnes();
    int iters = 0;
    auto st1 = iterate(c1, true, max_iters, iters);
    if (st1 == Step::Limit) throw std::runtime_error("simplex: iteration limit in phase 1");
    double infeas = 0.0;
    for (Eigen::Index i = 0; i < m_; ++i) {
      if (basis_[i] >= n_) infeas += xB_(i);
    }
    if (infeas > opt_.feas_tol * (1.0 + b_.cwiseAbs().maxCoeff())) {
      sol.status = LpStatus::Infeasible;
      sol.iterations = iters;
      return sol;
    }
    drive_out_artificials();

    // Phase 2.
    Eigen::VectorXd c2 = Eigen::VectorXd::Zero(n_ + m_);
    c2.head(n_) = c_;
    auto st2 = iterate(c2, false, max_iters, iters);
    sol.iterations = iters;
    if (st2 == Step::Limit) throw std::runtime_error("simplex: iteration limit in phase 2");
    if (st2 == Step::Unbounded) {
      sol.status = LpStatus::Unbounded;
      sol.value = -std::numeric_limits<double>::infinity();
      return sol;
    }
    refactor();
    sol.status = LpStatus::Optimal;
    sol.x = Eigen::VectorXd::Zero(n_);
    for (Eigen::Index i = 0; i < m_; ++i) {
      if (basis_[i] < n_) sol.x(basis_[i]) = std::max(0.0, xB_(i));
    }
    sol.value = c_.dot(sol.x);
    Eigen::VectorXd cB(m_);
    for (Eigen::Index i = 0; i < m_; ++i) cB(i) = basis_[i] < n_ ? c_(basis_[i]) : 0.0;
    Eigen::VectorXd pi = Binv_.transpose() * cB;
    sol.duals = pi.cwiseProduct(sign_);
    for (Eigen::Index i = 0; i < m_; ++i) {
      if (basis_[i] < n_) sol.basis.push_back(basis_[i]);
    }
    std::sort(sol.basis.begin(), sol.basis.end());
    Eigen::VectorXd r = A_.leftCols(n_) * sol.x - b_;
    sol.primal_residual = r.cwiseAbs().maxCoeff();
    Eigen::VectorXd red = c_ - A_.leftCols(n_).transpose() * pi;
    sol.dual_residual = std::max(0.0, -red.minCoeff());
    sol.gap = std::abs(sol.value - b_.dot(pi));
    return sol;
  }

 private:
  enum class Step { Optimal, Unbounded, Limit };

  void refactor() {
    Eigen::MatrixXd B(m_, m_);
    for (Eigen::Index i = 0; i < m_; ++i) B.col(i) = A_.col(basis_[i]);
    Binv_ = B.partialPivLu().inverse();
    xB_ = Binv_ * b_;
  }

  void pivot(Eigen::Index r, int entering, const Eigen::VectorXd& u) {
    const double ur = u(r);
    const double step = xB_(r) / ur;
    xB_ -= step * u;
    xB_(r) = step;
    Eigen::RowVectorXd prow = Binv_.row(r) / ur;
    for (Eigen::Index i = 0; i < m_; ++i) {
      if (i != r && u(i) != 0.0) Binv_.row(i) -= u(i) * prow;
    }
    Binv_.row(r) = prow;
    basis_[r] = entering;
    for (Eigen::Index i = 0; i < m_; ++i) {
      if (xB_(i) < 0.0 && xB_(i) > -opt_.feas_tol) xB_(i) = 0.0;
    }
  }

  Step iterate(const Eigen::VectorXd& cost, bool phase1, int max_iters, int& iters) {
    std::vector<char> in_basis(static_cast<std::size_t>(n_ + m_), 0);
    for (int j : basis_) in_basis[j] = 1;
    const double rc_tol = opt_.opt_tol * (phase1 ? 1.0 : scale_);
    int since_refactor = 0;
    while (true) {
      if (iters >= max_iters) return Step::Limit;
      Eigen::VectorXd cB(m_);
      for (Eigen::Index i = 0; i < m_; ++i) cB(i) = cost(basis_[i]);
      Eigen::VectorXd pi = Binv_.transpose() * cB;
      // Bland: the lowest-index improving column enters.
      int entering = -1;
      const Eigen::Index ncols = phase1 ? n_ + m_ : n_;
      for (Eigen::Index j = 0; j < ncols; ++j) {
        if (in_basis[j]) continue;
        const double d = cost(j) - A_.col(j).dot(pi);
        if (d < -rc_tol) {
          entering = static_cast<int>(j);
          break;
        }
      }
      if (entering < 0) return Step::Optimal;
      Eigen::VectorXd u = Binv_ * A_.col(entering);
      if ((u.array() <= opt_.pivot_tol).all() && since_refactor > 0) {
        // Confirm an apparent ray on a fresh factorization.
        refactor();
        since_refactor = 0;
        continue;
      }
      // Ratio test, ties broken by the lowest basic index.
      Eigen::Index leave = -1;
      double best = std::numeric_limits<double>::infinity();
      for (Eigen::Index i = 0; i < m_; ++i) {
        if (u(i) > opt_.pivot_tol) {
          const double ratio = std::max(0.0, xB_(i)) / u(i);
          const double tie = 1e-12 * (1.0 + ratio);
          if (leave < 0 || ratio < best - tie) {
            best = ratio;
            leave = i;
          } else if (std::abs(ratio - best) <= tie && basis_[i] < basis_[leave]) {
            best = std::min(best, ratio);
            leave = i;
          }
        }
      }
      if (leave < 0) return Step::Unbounded;
      in_basis[basis_[leave]] = 0;
      in_basis[entering] = 1;
      pivot(leave, entering, u);
      ++iters;
      if (++since_refactor >= opt_.refactor_every) {
        refactor();
        since_refactor = 0;
      }
    }
  }

  void drive_out_artificials() {
    for (Eigen::Index i = 0; i < m_; ++i) {
      if (basis_[i] < n_) continue;
      Eigen::RowVectorXd row = Binv_.row(i) * A_.leftCols(n_);
      int best = -1;
      double mag = 1e-9;
      for (Eigen::Index j = 0; j < n_; ++j) {
        if (std::find(basis_.begin(), basis_.end(), static_cast<int>(j)) != basis_.end()) continue;
        if (std::abs(row(j)) > mag) {
          mag = std::abs(row(j));
          best = static_cast<int>(j);
        }
      }
      // No candidate: the row is redundant and the artificial stays at zero.
      if (best >= 0) pivot(i, best, Binv_ * A_.col(best));
    }
    refactor();
  }

  LpOptions opt_;
  Eigen::Index m_ = 0, n_ = 0;
  Eigen::MatrixXd A_;
  Eigen::VectorXd b_, c_, sign_;
  double scale_ = 1.0;
  std::vector<int> basis_;
  Eigen::MatrixXd Binv_;
  Eigen::VectorXd xB_;
};

}  // namespace detail

inline LpSolution solve_lp(const LinearProgram& lp, const LpOptions& opt = {}) {
  if (lp.A.rows() == 0) {
    lp.validate();
    LpSolution sol;
    sol.x = Eigen::VectorXd::Zero(lp.c.size());
    if ((lp.c.array() < 0).any()) {
      sol.status = LpStatus::Unbounded;
      sol.value = -std::numeric_limits<double>::infinity();
    } else {
      sol.status = LpStatus::Optimal;
      sol.value = 0.0;
      sol.duals = Eigen::VectorXd();
    }
    return sol;
  }
  return detail::Simplex(lp, opt).solve();
}

}  // namespace wdro::conic
