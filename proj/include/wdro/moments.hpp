#pragma once

// Truncated moment sequences, moment matrices and localizing matrices.

#include <memory>
#include <stdexcept>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "wdro/polybasis.hpp"

namespace wdro {

struct Tms {
  std::shared_ptr<const MonomialBasis> basis;
  Eigen::VectorXd values;

  Tms() = default;
  Tms(std::shared_ptr<const MonomialBasis> b, Eigen::VectorXd v) : basis(std::move(b)), values(std::move(v)) {
    if (!basis || static_cast<std::size_t>(values.size()) != basis->size()) {
      throw std::invalid_argument("Tms: value length does not match basis");
    }
  }

  std::size_t nvars() const { return basis->nvars(); }
  int degree() const { return basis->max_degree(); }
  double operator[](const MultiIndex& a) const { return values(static_cast<Eigen::Index>(basis->index_of(a))); }
  double operator[](std::size_t i) const { return values(static_cast<Eigen::Index>(i)); }

  // Restriction to entries of degree <= t.
  Tms truncate(int t) const {
    if (t > degree()) throw std::invalid_argument("Tms::truncate: degree too high");
    auto b = std::make_shared<const MonomialBasis>(nvars(), t);
    return Tms(b, values.head(static_cast<Eigen::Index>(b->size())));
  }
};

inline std::shared_ptr<const MonomialBasis> make_basis(std::size_t nvars, int degree) {
  return std::make_shared<const MonomialBasis>(nvars, degree);
}

// <q, y> = sum_a q_a y_a
inline double pair(const Polynomial& q, const Tms& y) {
  if (q.nvars() != y.nvars()) throw std::invalid_argument("pair: variable count mismatch");
  if (q.degree() > y.degree()) throw std::invalid_argument("pair: polynomial degree exceeds tms degree");
  double v = 0.0;
  for (const auto& [a, c] : q.terms()) v += c * y[a];
  return v;
}

// Coefficients of q laid out along a basis.
inline Eigen::VectorXd coefficient_vector(const Polynomial& q, const MonomialBasis& basis) {
  if (q.nvars() != basis.nvars()) throw std::invalid_argument("coefficient_vector: variable count mismatch");
  Eigen::VectorXd c = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(basis.size()));
  for (const auto& [a, v] : q.terms()) {
    if (!basis.contains(a)) throw std::invalid_argument("coefficient_vector: polynomial degree exceeds basis");
    c(static_cast<Eigen::Index>(basis.index_of(a))) += v;
  }
  return c;
}

inline int ceil_half(int d) { return (d + 1) / 2; }

// Linear map y -> L_q^(k)[y]. Each lower-triangular entry (i, j) stores the
// (basis index, coefficient) pairs whose combination gives that entry.
class LocalizerTemplate {
 public:
  struct Term {
    std::size_t index;
    double coef;
  };
  struct Entry {
    int row;
    int col;
    std::vector<Term> terms;
  };

  LocalizerTemplate(const Polynomial& q, int k, std::shared_ptr<const MonomialBasis> basis2k)
      : generator_(q), order_(k), basis_(std::move(basis2k)) {
    if (!basis_ || q.nvars() != basis_->nvars()) throw std::invalid_argument("localizer: variable count mismatch");
    if (q.is_zero()) throw std::invalid_argument("localizer: zero generator");
    const int half = k - ceil_half(q.degree());
    if (half < 0) throw std::invalid_argument("localizer: order too low for generator degree");
    if (basis_->max_degree() < 2 * k) throw std::invalid_argument("localizer: tms degree below 2k");
    const std::size_t d = basis_->prefix_size(half);
    dim_ = static_cast<int>(d);
    entries_.reserve(d * (d + 1) / 2);
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j <= i; ++j) {
        Entry e{static_cast<int>(i), static_cast<int>(j), {}};
        const MultiIndex ab = (*basis_)[i] + (*basis_)[j];
        for (const auto& [g, c] : q.terms()) {
          const std::size_t idx = basis_->index_of(ab + g);
          auto it = std::find_if(e.terms.begin(), e.terms.end(), [&](const Term& t) { return t.index == idx; });
          if (it == e.terms.end()) {
            e.terms.push_back({idx, c});
          } else {
            it->coef += c;
          }
        }
        entries_.push_back(std::move(e));
      }
    }
  }

  const Polynomial& generator() const { return generator_; }
  int order() const { return order_; }
  int dim() const { return dim_; }
  const std::vector<Entry>& entries() const { return entries_; }
  const std::shared_ptr<const MonomialBasis>& basis() const { return basis_; }

  template <typename Vec>
  Eigen::MatrixXd apply_values(const Vec& y) const {
    Eigen::MatrixXd m(dim_, dim_);
    for (const auto& e : entries_) {
      double v = 0.0;
      for (const auto& t : e.terms) v += t.coef * y(static_cast<Eigen::Index>(t.index));
      m(e.row, e.col) = v;
      m(e.col, e.row) = v;
    }
    return m;
  }
  Eigen::MatrixXd apply(const Tms& y) const {
    if (y.basis->nvars() != basis_->nvars() || y.basis->size() < basis_->size()) {
      throw std::invalid_argument("localizer: tms incompatible with template");
    }
    return apply_values(y.values);
  }

 private:
  Polynomial generator_;
  int order_;
  std::shared_ptr<const MonomialBasis> basis_;
  int dim_ = 0;
  std::vector<Entry> entries_;
};

inline LocalizerTemplate localizer_template(const Polynomial& q, int k, std::shared_ptr<const MonomialBasis> basis2k) {
  return LocalizerTemplate(q, k, std::move(basis2k));
}

inline Eigen::MatrixXd localizing_matrix(const Polynomial& q, const Tms& y, int k) {
  if (2 * k > y.degree()) throw std::invalid_argument("localizing_matrix: tms degree below 2k");
  if (q.degree() > 2 * k) throw std::invalid_argument("localizing_matrix: generator degree exceeds 2k");
  const int half = k - ceil_half(q.degree());
  const MonomialBasis& b = *y.basis;
  const std::size_t d = b.prefix_size(half);
  Eigen::MatrixXd m(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      const MultiIndex ab = b[i] + b[j];
      double v = 0.0;
      for (const auto& [g, c] : q.terms()) v += c * y[ab + g];
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
      m(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = v;
    }
  }
  return m;
}

inline Eigen::MatrixXd moment_matrix(const Tms& y, int k) {
  return localizing_matrix(Polynomial::constant(y.nvars(), 1.0), y, k);
}

// Moments of the atomic measure sum_j w_j delta_{z_j}.
inline Tms tms_from_atoms(const std::vector<Eigen::VectorXd>& points, const std::vector<double>& weights, int degree) {
  if (points.empty() || points.size() != weights.size()) throw std::invalid_argument("tms_from_atoms: size mismatch");
  double total = 0.0;
  for (double w : weights) {
    if (w < 0.0) throw std::invalid_argument("tms_from_atoms: negative weight");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-12) throw std::invalid_argument("tms_from_atoms: weights must sum to one");
  const auto n = static_cast<std::size_t>(points.front().size());
  for (const auto& z : points) {
    if (static_cast<std::size_t>(z.size()) != n) throw std::invalid_argument("tms_from_atoms: dimension mismatch");
  }
  auto basis = make_basis(n, degree);
  Eigen::VectorXd v = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(basis->size()));
  for (std::size_t j = 0; j < points.size(); ++j) {
    std::span<const double> z(points[j].data(), n);
    for (std::size_t a = 0; a < basis->size(); ++a) v(static_cast<Eigen::Index>(a)) += weights[j] * (*basis)[a].evaluate(z);
  }
  return Tms(basis, std::move(v));
}

inline double min_eigenvalue(const Eigen::MatrixXd& m) {
  if (m.size() == 0) return 0.0;
  if (m.rows() == 1) return m(0, 0);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
  return es.eigenvalues()(0);
}

inline bool is_psd(const Eigen::MatrixXd& m, double tol = 1e-10) { return min_eigenvalue(m) >= -tol; }

}  // namespace wdro
