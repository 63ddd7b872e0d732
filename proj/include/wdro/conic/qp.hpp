#pragma once

// Dense primal active-set method for the projection QP
//   minimize 0.5 ||z - target||^2  s.t.  G z <= h,
// started from a feasible point.

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

namespace wdro::conic {

struct ProjectionResult {
  Eigen::VectorXd z;
  Eigen::VectorXd multipliers;  // one per row of G
  int iterations = 0;
  bool converged = false;
};

namespace detail {

// Least-squares multipliers and projected step for the working set W.
inline void working_set_step(const Eigen::MatrixXd& G, const std::vector<int>& W, const Eigen::VectorXd& z,
                             const Eigen::VectorXd& target, Eigen::VectorXd& step, Eigen::VectorXd& mu) {
  const Eigen::VectorXd grad = z - target;
  if (W.empty()) {
    step = -grad;
    mu.resize(0);
    return;
  }
  Eigen::MatrixXd GW(static_cast<Eigen::Index>(W.size()), G.cols());
  for (std::size_t r = 0; r < W.size(); ++r) GW.row(static_cast<Eigen::Index>(r)) = G.row(W[r]);
  Eigen::MatrixXd K = GW * GW.transpose();
  mu = -K.ldlt().solve(GW * grad);
  step = -grad - GW.transpose() * mu;
}

inline bool independent_of(const Eigen::MatrixXd& G, const std::vector<int>& W, int row) {
  if (W.empty()) return G.row(row).norm() > 0.0;
  if (static_cast<Eigen::Index>(W.size()) >= G.cols()) return false;
  Eigen::MatrixXd M(G.cols(), static_cast<Eigen::Index>(W.size()) + 1);
  for (std::size_t r = 0; r < W.size(); ++r) M.col(static_cast<Eigen::Index>(r)) = G.row(W[r]).transpose();
  M.col(static_cast<Eigen::Index>(W.size())) = G.row(row).transpose();
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(M);
  qr.setThreshold(1e-10);
  return qr.rank() == M.cols();
}

}  // namespace detail

inline ProjectionResult project_onto_polyhedron(const Eigen::MatrixXd& G, const Eigen::VectorXd& h,
                                                const Eigen::VectorXd& target, const Eigen::VectorXd& start,
                                                double tol = 1e-10, int max_iters = 0) {
  const Eigen::Index n = G.cols();
  if (G.rows() != h.size() || target.size() != n || start.size() != n) {
    throw std::invalid_argument("project_onto_polyhedron: dimension mismatch");
  }
  const double scale = 1.0 + h.cwiseAbs().maxCoeff();
  if (G.rows() > 0 && ((G * start - h).maxCoeff() > 1e-7 * scale)) {
    throw std::invalid_argument("project_onto_polyhedron: start point infeasible");
  }
  if (max_iters <= 0) max_iters = static_cast<int>(10 * (G.rows() + n) + 100);

  ProjectionResult res;
  Eigen::VectorXd z = start;
  std::vector<int> W;
  std::vector<char> active(static_cast<std::size_t>(G.rows()), 0);
  for (Eigen::Index i = 0; i < G.rows(); ++i) {
    const double slack = h(i) - G.row(i).dot(z);
    if (slack <= 1e-9 * scale && detail::independent_of(G, W, static_cast<int>(i))) {
      W.push_back(static_cast<int>(i));
      active[i] = 1;
    }
  }

  Eigen::VectorXd step, mu;
  for (int it = 0; it < max_iters; ++it) {
    res.iterations = it + 1;
    detail::working_set_step(G, W, z, target, step, mu);
    if (step.norm() <= tol * (1.0 + z.norm())) {
      Eigen::Index worst = -1;
      double most_negative = -tol * (1.0 + (z - target).norm());
      for (Eigen::Index r = 0; r < mu.size(); ++r) {
        if (mu(r) < most_negative) {
          most_negative = mu(r);
          worst = r;
        }
      }
      if (worst < 0) {
        res.converged = true;
        break;
      }
      active[W[worst]] = 0;
      W.erase(W.begin() + worst);
      continue;
    }
    double alpha = 1.0;
    int blocking = -1;
    for (Eigen::Index i = 0; i < G.rows(); ++i) {
      if (active[i]) continue;
      const double gp = G.row(i).dot(step);
      if (gp <= 1e-14 * step.norm()) continue;
      const double a = std::max(0.0, h(i) - G.row(i).dot(z)) / gp;
      if (a < alpha) {
        alpha = a;
        blocking = static_cast<int>(i);
      }
    }
    z += alpha * step;
    if (blocking >= 0) {
      W.push_back(blocking);
      active[blocking] = 1;
    }
  }
  res.z = z;
  res.multipliers = Eigen::VectorXd::Zero(G.rows());
  detail::working_set_step(G, W, z, target, step, mu);
  for (std::size_t r = 0; r < W.size(); ++r) res.multipliers(W[r]) = std::max(0.0, mu(static_cast<Eigen::Index>(r)));
  return res;
}

}  // namespace wdro::conic
