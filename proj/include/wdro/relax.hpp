#pragma once

// DRO instances and their moment relaxations: per-sample inner programs, the
// budget-coupled program and the Lagrangian value at fixed multiplier.

#include <cmath>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include "wdro/conic/lp.hpp"
#include "wdro/conic/sdp.hpp"
#include "wdro/moments.hpp"
#include "wdro/parallel.hpp"
#include "wdro/polybasis.hpp"

namespace wdro {

inline constexpr double kSampleFeasibilityTol = 1e-9;

namespace detail {

inline void check_common(std::size_t n1, std::size_t n0, const Polynomial& f, const std::vector<Polynomial>& h,
                         const std::vector<Eigen::VectorXd>& samples, const Eigen::MatrixXd& H, int p,
                         const Eigen::VectorXd& lo, const Eigen::VectorXd& hi) {
  if (n1 == 0 || n0 == 0) throw std::invalid_argument("instance: empty decision or uncertainty dimension");
  if (f.nvars() != n1) throw std::invalid_argument("instance: f must be a polynomial in x");
  if (p < 2 || p % 2 != 0) throw std::invalid_argument("instance: p must be even and >= 2");
  if (H.rows() != static_cast<Eigen::Index>(n0) || H.cols() != static_cast<Eigen::Index>(n0)) {
    throw std::invalid_argument("instance: H dimension mismatch");
  }
  if (lo.size() != static_cast<Eigen::Index>(n1) || hi.size() != static_cast<Eigen::Index>(n1)) {
    throw std::invalid_argument("instance: box dimension mismatch");
  }
  if ((lo.array() > hi.array()).any()) throw std::invalid_argument("instance: empty box");
  if (samples.empty()) throw std::invalid_argument("instance: no samples");
  for (const auto& q : h) {
    if (q.nvars() != n0) throw std::invalid_argument("instance: h must be polynomials in xi");
  }
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].size() != static_cast<Eigen::Index>(n0)) throw std::invalid_argument("instance: sample dimension mismatch");
    for (const auto& q : h) {
      if (q.evaluate(samples[i]) < -kSampleFeasibilityTol) {
        throw std::invalid_argument("instance: sample " + std::to_string(i + 1) + " violates the support constraints");
      }
    }
  }
}

}  // namespace detail

struct SingleStageInstance {
  std::size_t n1 = 0;  // decision dimension
  std::size_t n0 = 0;  // uncertainty dimension
  Polynomial f;        // in x
  Polynomial F;        // in (x, xi), x first
  std::vector<Polynomial> h;  // in xi
  std::vector<Eigen::VectorXd> samples;
  Eigen::MatrixXd H;
  int p = 2;
  Eigen::VectorXd lo, hi;
  bool support_bounded = true;  // Xi compact: the inner values stay finite at lambda = 0

  void validate() const {
    detail::check_common(n1, n0, f, h, samples, H, p, lo, hi);
    if (F.nvars() != n1 + n0) throw std::invalid_argument("instance: F must be a polynomial in (x, xi)");
  }
};

struct TwoStageInstance {
  std::size_t n1 = 0;  // decision dimension
  std::size_t n0 = 0;  // uncertainty dimension
  std::size_t n2 = 0;  // recourse dual dimension (rows of A)
  std::size_t m2 = 0;  // recourse primal dimension (columns of A)
  Polynomial f;        // in x
  Eigen::MatrixXd A;   // n2 x m2; dual constraints c(xi) - A^T u >= 0
  std::vector<std::vector<Polynomial>> B;  // n2 x n1, in xi
  std::vector<Polynomial> b;               // n2, in xi
  std::vector<Polynomial> c;               // m2, in xi
  Polynomial d;                            // in xi
  std::vector<Polynomial> h;               // in xi
  // Further generators in (xi, u) that are nonnegative on the dual feasible
  // set, e.g. a ball R0 - |u|^2 bounding the recourse duals.
  std::vector<Polynomial> extra;
  std::vector<Eigen::VectorXd> samples;
  Eigen::MatrixXd H;
  int p = 2;
  Eigen::VectorXd lo, hi;
  bool support_bounded = true;

  void validate() const {
    detail::check_common(n1, n0, f, h, samples, H, p, lo, hi);
    if (n2 == 0 || m2 == 0) throw std::invalid_argument("instance: empty recourse dimensions");
    if (A.rows() != static_cast<Eigen::Index>(n2) || A.cols() != static_cast<Eigen::Index>(m2)) {
      throw std::invalid_argument("instance: A must be n2 x m2");
    }
    if (B.size() != n2 || b.size() != n2 || c.size() != m2) throw std::invalid_argument("instance: B, b or c size mismatch");
    for (const auto& row : B) {
      if (row.size() != n1) throw std::invalid_argument("instance: B must be n2 x n1");
      for (const auto& e : row) {
        if (e.nvars() != n0) throw std::invalid_argument("instance: B entries must be polynomials in xi");
      }
    }
    for (const auto& e : b) {
      if (e.nvars() != n0) throw std::invalid_argument("instance: b entries must be polynomials in xi");
    }
    for (const auto& e : c) {
      if (e.nvars() != n0) throw std::invalid_argument("instance: c entries must be polynomials in xi");
    }
    if (d.nvars() != n0) throw std::invalid_argument("instance: d must be a polynomial in xi");
    for (const auto& e : extra) {
      if (e.nvars() != n0 + n2) throw std::invalid_argument("instance: extra generators must be polynomials in (xi, u)");
    }
  }
};

struct RelaxationOrders {
  int minimum = 0;  // d1, d2 or d3
  int k = 0;
};

inline Eigen::VectorXd gradient(const Polynomial& f, const Eigen::VectorXd& x) {
  Eigen::VectorXd g(static_cast<Eigen::Index>(f.nvars()));
  for (std::size_t j = 0; j < f.nvars(); ++j) g(static_cast<Eigen::Index>(j)) = partial_derivative(f, j).evaluate(x);
  return g;
}

inline void check_point(const Eigen::VectorXd& x, std::size_t n1) {
  if (x.size() != static_cast<Eigen::Index>(n1)) throw std::invalid_argument("decision dimension mismatch");
}

// F_x = F(x, .)
inline Polynomial instantiate_Fx(const SingleStageInstance& inst, const Eigen::VectorXd& x) {
  check_point(x, inst.n1);
  return substitute_prefix(inst.F, std::span<const double>(x.data(), inst.n1));
}

// G_x(xi, u) = u^T B(xi) x + b(xi)^T u + d(xi), a polynomial in (xi, u).
inline Polynomial instantiate_Gx(const TwoStageInstance& inst, const Eigen::VectorXd& x) {
  check_point(x, inst.n1);
  const std::size_t nv = inst.n0 + inst.n2;
  Polynomial G = embed(inst.d, nv, 0);
  for (std::size_t l = 0; l < inst.n2; ++l) {
    Polynomial coef = inst.b[l];
    for (std::size_t j = 0; j < inst.n1; ++j) coef += inst.B[l][j] * x(static_cast<Eigen::Index>(j));
    G += embed(coef, nv, 0) * Polynomial::variable(nv, inst.n0 + l);
  }
  return G;
}

// g(xi, u) = c(xi) - A^T u
inline std::vector<Polynomial> dual_constraints(const TwoStageInstance& inst) {
  const std::size_t nv = inst.n0 + inst.n2;
  std::vector<Polynomial> g;
  g.reserve(inst.m2);
  for (std::size_t j = 0; j < inst.m2; ++j) {
    Polynomial gj = embed(inst.c[j], nv, 0);
    for (std::size_t l = 0; l < inst.n2; ++l) {
      const double a = inst.A(static_cast<Eigen::Index>(l), static_cast<Eigen::Index>(j));
      if (a != 0.0) gj -= Polynomial::variable(nv, inst.n0 + l) * a;
    }
    g.push_back(std::move(gj));
  }
  return g;
}

// g_eps^(i) = (eps^2 - |xi - xi_hat_i|_2^2) * g, one generator per component of g.
inline std::vector<Polynomial> strengthening_generators(const TwoStageInstance& inst, std::size_t i, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("strengthening: epsilon must be positive");
  if (i >= inst.samples.size()) throw std::out_of_range("strengthening: sample index out of range");
  const std::size_t nv = inst.n0 + inst.n2;
  const Polynomial ball = Polynomial::constant(inst.n0, eps * eps) -
                          distance_power(inst.samples[i], Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(inst.n0),
                                                                                    static_cast<Eigen::Index>(inst.n0)), 2);
  const Polynomial ball_e = embed(ball, nv, 0);
  std::vector<Polynomial> out;
  for (const auto& gj : dual_constraints(inst)) out.push_back(ball_e * gj);
  return out;
}

inline int max_half_degree(const std::vector<Polynomial>& qs) {
  int d = 0;
  for (const auto& q : qs) d = std::max(d, ceil_half(q.degree()));
  return d;
}

// d1 = max{ceil(deg F_x / 2), ceil(deg h / 2), p / 2}
inline int min_order_single(const SingleStageInstance& inst, const Eigen::VectorXd& x) {
  return std::max({ceil_half(instantiate_Fx(inst, x).degree()), max_half_degree(inst.h), inst.p / 2});
}

// d2 = max{ceil(deg G_x / 2), ceil(deg g / 2), ceil(deg h / 2), p / 2}
inline int min_order_two_stage(const TwoStageInstance& inst, const Eigen::VectorXd& x) {
  return std::max({ceil_half(instantiate_Gx(inst, x).degree()), max_half_degree(dual_constraints(inst)),
                   max_half_degree(inst.extra), max_half_degree(inst.h), inst.p / 2});
}

// d3 = max{d2, ceil(deg g_eps / 2)}
inline int min_order_strengthened(const TwoStageInstance& inst, const Eigen::VectorXd& x) {
  return std::max(min_order_two_stage(inst, x), ceil_half(2 + [&] {
                    int d = 0;
                    for (const auto& g : dual_constraints(inst)) d = std::max(d, g.degree());
                    return d;
                  }()));
}

enum class Variant { Single, TwoStage, TwoStageStrengthened };

inline const char* to_string(Variant v) {
  switch (v) {
    case Variant::Single: return "single";
    case Variant::TwoStage: return "two_stage";
    case Variant::TwoStageStrengthened: return "two_stage_strengthened";
  }
  return "unknown";
}

// Default epsilon for the strengthened relaxation.
inline double default_epsilon(std::size_t N, double r, int p) { return std::max(static_cast<double>(N) * std::pow(r, p), 1e-3); }

// An inner program posed in local coordinates xi = shift + scale .* z; the
// tms of the original variables is to_original * y_local.
struct FramedProgram {
  conic::ConicProgram program;
  Eigen::SparseMatrix<double> to_original;
};

// The r = 0 program of one sample over a tms w in u alone; with no u the
// value is the constant.
struct FaceProgram {
  conic::ConicProgram program;
  std::shared_ptr<const MonomialBasis> basis;  // null without u
  double constant = 0.0;
  bool infeasible = false;
};

// Precomputed relaxation data shared by every (x, lambda, i). The tms
// variables are xi (single stage) or (xi, u) (two stage), xi first.
class RelaxationModel {
 public:
  RelaxationModel(const SingleStageInstance& inst, int k) : variant_(Variant::Single), k_(k) {
    inst.validate();
    single_ = std::make_shared<const SingleStageInstance>(inst);
    nvars_ = inst.n0;
    n1_ = inst.n1;
    N_ = inst.samples.size();
    p_ = inst.p;
    f_ = inst.f;
    lo_ = inst.lo;
    hi_ = inst.hi;
    support_bounded_ = inst.support_bounded;
    generators_ = inst.h;
    for (std::size_t j = 0; j < n1_; ++j) grad_F_.push_back(partial_derivative(inst.F, j));
    init_common(inst.samples, inst.H);
  }

  RelaxationModel(const TwoStageInstance& inst, int k, std::optional<double> eps = std::nullopt)
      : variant_(eps ? Variant::TwoStageStrengthened : Variant::TwoStage), k_(k), eps_(eps) {
    inst.validate();
    two_ = std::make_shared<const TwoStageInstance>(inst);
    nvars_ = inst.n0 + inst.n2;
    n1_ = inst.n1;
    N_ = inst.samples.size();
    p_ = inst.p;
    f_ = inst.f;
    lo_ = inst.lo;
    hi_ = inst.hi;
    support_bounded_ = inst.support_bounded;
    for (const auto& q : inst.h) generators_.push_back(embed(q, nvars_, 0));
    for (auto& g : dual_constraints(inst)) generators_.push_back(std::move(g));
    for (const auto& e : inst.extra) generators_.push_back(e);
    // d/dx_j G_x = sum_l u_l B_lj(xi)
    for (std::size_t j = 0; j < n1_; ++j) {
      Polynomial gj(nvars_);
      for (std::size_t l = 0; l < inst.n2; ++l) {
        gj += embed(inst.B[l][j], nvars_, 0) * Polynomial::variable(nvars_, inst.n0 + l);
      }
      grad_G_.push_back(std::move(gj));
    }
    init_common(inst.samples, inst.H);
    if (eps_) {
      for (std::size_t i = 0; i < N_; ++i) {
        std::vector<std::shared_ptr<const LocalizerTemplate>> blocks;
        for (const auto& q : strengthening_generators(inst, i, *eps_)) {
          check_generator(q);
          blocks.push_back(std::make_shared<const LocalizerTemplate>(q, k_, basis_));
        }
        per_sample_.push_back(std::move(blocks));
      }
    }
  }

  Variant variant() const { return variant_; }
  int order() const { return k_; }
  std::optional<double> epsilon() const { return eps_; }
  std::size_t nvars() const { return nvars_; }
  std::size_t decision_dim() const { return n1_; }
  std::size_t sample_count() const { return N_; }
  int p() const { return p_; }
  bool support_bounded() const { return support_bounded_; }
  const Eigen::VectorXd& lo() const { return lo_; }
  const Eigen::VectorXd& hi() const { return hi_; }
  const std::shared_ptr<const MonomialBasis>& basis() const { return basis_; }
  std::size_t tms_size() const { return basis_->size(); }
  const Polynomial& distance(std::size_t i) const { return Q_.at(i); }
  const SingleStageInstance* single() const { return single_.get(); }
  const TwoStageInstance* two_stage() const { return two_.get(); }

  double f_value(const Eigen::VectorXd& x) const { return f_.evaluate(x); }
  Eigen::VectorXd f_gradient(const Eigen::VectorXd& x) const { return gradient(f_, x); }

  // F_x or G_x in the tms variables.
  Polynomial objective(const Eigen::VectorXd& x) const {
    return single_ ? instantiate_Fx(*single_, x) : instantiate_Gx(*two_, x);
  }
  // Partial derivatives in x of the objective, as polynomials in the tms variables.
  std::vector<Polynomial> objective_x_gradient(const Eigen::VectorXd& x) const {
    if (two_) return grad_G_;
    std::vector<Polynomial> out;
    out.reserve(n1_);
    for (const auto& g : grad_F_) out.push_back(substitute_prefix(g, std::span<const double>(x.data(), n1_)));
    return out;
  }

  int minimum_order(const Eigen::VectorXd& x) const {
    if (single_) return min_order_single(*single_, x);
    return eps_ ? min_order_strengthened(*two_, x) : min_order_two_stage(*two_, x);
  }

  // Inner program: maximize <obj_x - lambda Q_i, y> over normalized y in the
  // relaxed feasible set.
  conic::ConicProgram inner_program(const Eigen::VectorXd& x, double lambda, std::size_t i) const {
    if (!(lambda >= 0.0)) throw std::invalid_argument("inner_program: lambda must be nonnegative");
    if (i >= N_) throw std::out_of_range("inner_program: sample index out of range");
    const Polynomial obj = objective(x);
    check_order(obj, x);
    conic::ConicProgram prog;
    prog.dimension = basis_->size();
    prog.objective = coefficient_vector(obj, *basis_) - lambda * Qvec_[i];
    prog.normalized = {0};
    for (const auto& b : blocks_) prog.psd_blocks.push_back({b, 0});
    if (eps_) {
      for (const auto& b : per_sample_[i]) prog.psd_blocks.push_back({b, 0});
    }
    return prog;
  }

  // The same inner program in coordinates centred at sample i and scaled by
  // lambda^(-1/p) when lambda > 1. The relaxation is invariant under affine
  // changes of variables; the local frame keeps large multipliers well scaled.
  FramedProgram framed_inner_program(const Eigen::VectorXd& x, double lambda, std::size_t i) const {
    if (!(lambda >= 0.0)) throw std::invalid_argument("inner_program: lambda must be nonnegative");
    if (i >= N_) throw std::out_of_range("inner_program: sample index out of range");
    const Polynomial obj = objective(x);
    check_order(obj, x);
    const double s = lambda > 1.0 ? std::pow(lambda, -1.0 / p_) : 1.0;
    std::vector<double> shift(nvars_, 0.0), scale(nvars_, 1.0);
    for (std::size_t j = 0; j < n0_; ++j) {
      shift[j] = samples_[i](static_cast<Eigen::Index>(j));
      scale[j] = s;
    }
    auto local = [&](const Polynomial& q) { return affine_substitute(q, shift, scale); };
    auto localizer = [&](const std::shared_ptr<const LocalizerTemplate>& b) {
      return std::make_shared<const LocalizerTemplate>(local(b->generator()), k_, basis_);
    };
    FramedProgram out;
    conic::ConicProgram& prog = out.program;
    prog.dimension = basis_->size();
    prog.objective = coefficient_vector(local(obj), *basis_) - lambda * coefficient_vector(local(Q_[i]), *basis_);
    prog.normalized = {0};
    prog.psd_blocks.push_back({blocks_.front(), 0});
    for (std::size_t b = 1; b < blocks_.size(); ++b) prog.psd_blocks.push_back({localizer(blocks_[b]), 0});
    if (eps_) {
      for (const auto& b : per_sample_[i]) prog.psd_blocks.push_back({localizer(b), 0});
    }
    std::vector<Eigen::Triplet<double>> trips;
    for (std::size_t a = 0; a < basis_->size(); ++a) {
      Polynomial mono(nvars_);
      mono.add_term((*basis_)[a], 1.0);
      const Polynomial image = local(mono);
      for (const auto& [g, c] : image.terms()) {
        trips.emplace_back(static_cast<int>(a), static_cast<int>(basis_->index_of(g)), c);
      }
    }
    const auto m = static_cast<Eigen::Index>(basis_->size());
    out.to_original.resize(m, m);
    out.to_original.setFromTriplets(trips.begin(), trips.end());
    return out;
  }

  // At r = 0 the budget forces <Q_i, y_i> = 0. Q_i is a sum of squares of
  // polynomials in xi - xi_hat_i, so with M_k[y_i] PSD every moment carrying
  // such a factor vanishes and y_i is the point xi_hat_i times a tms w in u.
  // This is the program over w on that face, where Slater holds again.
  FaceProgram face_program(const Eigen::VectorXd& x, std::size_t i) const {
    if (i >= N_) throw std::out_of_range("face_program: sample index out of range");
    const Polynomial obj = objective(x);
    check_order(obj, x);
    const std::span<const double> xi(samples_[i].data(), n0_);
    FaceProgram out;
    const std::size_t nu = nvars_ - n0_;
    if (nu == 0) {
      out.constant = substitute_prefix(obj, xi).coefficient(MultiIndex(std::vector<int>{}));
      return out;
    }
    out.basis = make_basis(nu, 2 * k_);
    auto& prog = out.program;
    prog.dimension = out.basis->size();
    prog.objective = coefficient_vector(substitute_prefix(obj, xi), *out.basis);
    prog.normalized.push_back(0);
    prog.psd_blocks.push_back({std::make_shared<const LocalizerTemplate>(Polynomial::constant(nu, 1.0), k_, out.basis), 0});
    auto add = [&](const Polynomial& q) {
      const Polynomial g = substitute_prefix(q, xi);
      if (g.degree() <= 0) {
        if (g.coefficient(MultiIndex(std::vector<int>(nu, 0))) < -kSampleFeasibilityTol) out.infeasible = true;
        return;
      }
      prog.psd_blocks.push_back({std::make_shared<const LocalizerTemplate>(g, k_, out.basis), 0});
    };
    for (const auto& q : generators_) add(q);
    if (eps_) {
      for (const auto& b : per_sample_[i]) add(b->generator());
    }
    return out;
  }

  // The tms of xi_hat_i times w, in the full basis.
  Tms lift_face(std::size_t i, const FaceProgram& face, const Eigen::VectorXd& w) const {
    Eigen::VectorXd y(static_cast<Eigen::Index>(basis_->size()));
    for (std::size_t j = 0; j < basis_->size(); ++j) {
      const MultiIndex& a = (*basis_)[j];
      double v = 1.0;
      for (std::size_t l = 0; l < n0_; ++l) {
        for (int e = 0; e < a[l]; ++e) v *= samples_[i](static_cast<Eigen::Index>(l));
      }
      if (face.basis) {
        std::vector<int> rest(a.exponents().begin() + static_cast<std::ptrdiff_t>(n0_), a.exponents().end());
        v *= w(static_cast<Eigen::Index>(face.basis->index_of(MultiIndex(std::move(rest)))));
      }
      y(static_cast<Eigen::Index>(j)) = v;
    }
    return Tms(basis_, std::move(y));
  }

  // Coupled program: N tms blocks and the budget (1/N) sum <Q_i, y_i> <= r^p.
  conic::ConicProgram coupled_program(const Eigen::VectorXd& x, double r) const {
    if (!(r >= 0.0)) throw std::invalid_argument("coupled_program: radius must be nonnegative");
    const Polynomial obj = objective(x);
    check_order(obj, x);
    const Eigen::VectorXd c = coefficient_vector(obj, *basis_);
    const std::size_t m = basis_->size();
    const double invN = 1.0 / static_cast<double>(N_);
    conic::ConicProgram prog;
    prog.dimension = N_ * m;
    prog.objective = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(N_ * m));
    conic::LinearInequality budget;
    budget.b = std::pow(r, p_);
    for (std::size_t i = 0; i < N_; ++i) {
      const std::size_t off = i * m;
      prog.objective.segment(static_cast<Eigen::Index>(off), static_cast<Eigen::Index>(m)) = invN * c;
      prog.normalized.push_back(off);
      for (const auto& b : blocks_) prog.psd_blocks.push_back({b, off});
      if (eps_) {
        for (const auto& b : per_sample_[i]) prog.psd_blocks.push_back({b, off});
      }
      for (Eigen::Index j = 0; j < Qvec_[i].size(); ++j) {
        if (Qvec_[i](j) != 0.0) budget.a.emplace_back(off + static_cast<std::size_t>(j), invN * Qvec_[i](j));
      }
    }
    prog.linear_ineqs.push_back(std::move(budget));
    return prog;
  }

 private:
  void init_common(const std::vector<Eigen::VectorXd>& samples, const Eigen::MatrixXd& H) {
    if (k_ < 1) throw std::invalid_argument("relaxation order must be at least 1");
    basis_ = make_basis(nvars_, 2 * k_);
    blocks_.push_back(std::make_shared<const LocalizerTemplate>(Polynomial::constant(nvars_, 1.0), k_, basis_));
    for (const auto& q : generators_) {
      if (q.degree() == 0) {
        if (q.evaluate(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(nvars_))) < 0.0) {
          throw std::invalid_argument("relaxation: negative constant generator");
        }
        continue;
      }
      check_generator(q);
      blocks_.push_back(std::make_shared<const LocalizerTemplate>(q, k_, basis_));
    }
    samples_ = samples;
    n0_ = static_cast<std::size_t>(samples.front().size());
    for (const auto& s : samples) {
      Q_.push_back(embed(distance_power(s, H, p_), nvars_, 0));
      Qvec_.push_back(coefficient_vector(Q_.back(), *basis_));
    }
    if (p_ / 2 > k_) throw std::invalid_argument("relaxation order below p/2");
  }


  void check_generator(const Polynomial& q) const {
    if (ceil_half(q.degree()) > k_) {
      throw std::invalid_argument("relaxation order " + std::to_string(k_) + " too low for a generator of degree " +
                                  std::to_string(q.degree()));
    }
  }

  void check_order(const Polynomial& obj, const Eigen::VectorXd& x) const {
    check_point(x, n1_);
    if (ceil_half(obj.degree()) > k_) {
      throw std::invalid_argument("relaxation order " + std::to_string(k_) + " below the minimum order " +
                                  std::to_string(minimum_order(x)));
    }
  }

  Variant variant_;
  int k_ = 0;
  std::optional<double> eps_;
  std::shared_ptr<const SingleStageInstance> single_;
  std::shared_ptr<const TwoStageInstance> two_;
  std::size_t nvars_ = 0, n1_ = 0, N_ = 0;
  int p_ = 2;
  Polynomial f_;
  Eigen::VectorXd lo_, hi_;
  bool support_bounded_ = true;
  std::vector<Polynomial> generators_;
  std::vector<Polynomial> grad_F_;  // in (x, xi)
  std::vector<Polynomial> grad_G_;  // in (xi, u)
  std::shared_ptr<const MonomialBasis> basis_;
  std::vector<std::shared_ptr<const LocalizerTemplate>> blocks_;
  std::vector<std::vector<std::shared_ptr<const LocalizerTemplate>>> per_sample_;
  std::vector<Polynomial> Q_;
  std::vector<Eigen::VectorXd> Qvec_;
  std::vector<Eigen::VectorXd> samples_;
  std::size_t n0_ = 0;
};

inline conic::ConicProgram build_inner_single(const SingleStageInstance& inst, const Eigen::VectorXd& x, double lambda,
                                              std::size_t i, int k) {
  return RelaxationModel(inst, k).inner_program(x, lambda, i);
}

inline conic::ConicProgram build_inner_two_stage(const TwoStageInstance& inst, const Eigen::VectorXd& x, double lambda,
                                                 std::size_t i, int k, std::optional<double> eps = std::nullopt) {
  return RelaxationModel(inst, k, eps).inner_program(x, lambda, i);
}

struct InnerResult {
  conic::SolveStatus status = conic::SolveStatus::NumericalFailure;
  double value = std::numeric_limits<double>::quiet_NaN();
  Tms y;
  conic::ConicSolution solution;
};

// Solves one inner program. Unbounded and Infeasible come back as statuses;
// the value is meaningful only for Optimal.
inline InnerResult inner_value(const conic::ConicProgram& prog, const std::shared_ptr<const MonomialBasis>& basis,
                               const conic::SdpOptions& opt = {}) {
  InnerResult res;
  res.solution = conic::solve_sdp(prog, opt);
  res.status = res.solution.status;
  if (res.status == conic::SolveStatus::Optimal) {
    res.value = res.solution.objective;
    res.y = Tms(basis, res.solution.y);
  } else if (res.status == conic::SolveStatus::Unbounded) {
    res.value = std::numeric_limits<double>::infinity();
  }
  return res;
}

inline InnerResult inner_value(const FramedProgram& framed, const std::shared_ptr<const MonomialBasis>& basis,
                               const conic::SdpOptions& opt = {}) {
  InnerResult res = inner_value(framed.program, basis, opt);
  if (res.status == conic::SolveStatus::Optimal) res.y = Tms(basis, framed.to_original * res.solution.y);
  return res;
}

struct VFormResult {
  conic::SolveStatus status = conic::SolveStatus::NumericalFailure;
  double value = std::numeric_limits<double>::quiet_NaN();
  std::vector<Tms> tms;
  double lambda = std::numeric_limits<double>::quiet_NaN();  // budget multiplier
  conic::ConicSolution solution;
};

// Budget-coupled relaxation value (without f). At r = 0 the budget
// multiplier is not attained and the value is taken on the pinned face.
inline VFormResult V_form(const RelaxationModel& model, const Eigen::VectorXd& x, double r,
                          const conic::SdpOptions& opt = {}) {
  VFormResult res;
  if (r == 0.0) {
    // Slater fails for the coupled program; solve on the face it pins.
    double sum = 0.0;
    for (std::size_t i = 0; i < model.sample_count(); ++i) {
      const FaceProgram face = model.face_program(x, i);
      if (face.infeasible) {
        res.status = conic::SolveStatus::Infeasible;
        return res;
      }
      Eigen::VectorXd w;
      double v = face.constant;
      if (face.basis) {
        const conic::ConicSolution sol = conic::solve_sdp(face.program, opt);
        if (sol.status != conic::SolveStatus::Optimal) {
          res.status = sol.status;
          if (res.status == conic::SolveStatus::Unbounded) res.value = std::numeric_limits<double>::infinity();
          res.solution = sol;
          res.tms.clear();
          return res;
        }
        w = sol.y;
        v = sol.objective;
      }
      sum += v;
      res.tms.push_back(model.lift_face(i, face, w));
    }
    res.status = conic::SolveStatus::Optimal;
    res.value = sum / static_cast<double>(model.sample_count());
    res.lambda = std::numeric_limits<double>::infinity();  // not attained
    return res;
  }
  res.solution = conic::solve_sdp(model.coupled_program(x, r), opt);
  res.status = res.solution.status;
  if (res.status == conic::SolveStatus::Optimal) {
    res.value = res.solution.objective;
    const std::size_t m = model.tms_size();
    for (std::size_t i = 0; i < model.sample_count(); ++i) {
      res.tms.emplace_back(model.basis(), res.solution.y.segment(static_cast<Eigen::Index>(i * m), static_cast<Eigen::Index>(m)));
    }
    res.lambda = res.solution.ineq_duals.size() ? res.solution.ineq_duals(0) : 0.0;
  } else if (res.status == conic::SolveStatus::Unbounded) {
    res.value = std::numeric_limits<double>::infinity();
  }
  return res;
}

struct VfResult {
  conic::SolveStatus status = conic::SolveStatus::NumericalFailure;
  double value = std::numeric_limits<double>::quiet_NaN();  // lambda r^p + (1/N) sum inner
  std::vector<InnerResult> inner;
  std::size_t failed_sample = 0;  // first non-optimal sample (0-based), when status != Optimal
};

// Lagrangian value at fixed lambda (without f). The N inner programs run
// concurrently; the sum is taken in sample order.
inline VfResult v_form(const RelaxationModel& model, const Eigen::VectorXd& x, double lambda, double r,
                       const conic::SdpOptions& opt = {}, std::size_t threads = 1) {
  if (!(r >= 0.0)) throw std::invalid_argument("v_form: radius must be nonnegative");
  const std::size_t N = model.sample_count();
  VfResult res;
  res.inner.resize(N);
  parallel_for(N, threads, [&](std::size_t i) { res.inner[i] = inner_value(model.framed_inner_program(x, lambda, i), model.basis(), opt); });
  double sum = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    if (res.inner[i].status != conic::SolveStatus::Optimal) {
      res.status = res.inner[i].status;
      res.failed_sample = i;
      res.value = res.status == conic::SolveStatus::Unbounded ? std::numeric_limits<double>::infinity()
                                                               : std::numeric_limits<double>::quiet_NaN();
      return res;
    }
    sum += res.inner[i].value;
  }
  res.status = conic::SolveStatus::Optimal;
  res.value = lambda * std::pow(r, model.p()) + sum / static_cast<double>(N);
  return res;
}

// Recourse LP at (x, xi): min c(xi)^T x' + d(xi)  s.t.  A x' = B(xi) x + b(xi), x' >= 0.
// The equality duals are the maximizing u of the dual recourse problem.
struct RecourseResult {
  conic::LpStatus status = conic::LpStatus::Infeasible;
  double value = std::numeric_limits<double>::quiet_NaN();
  Eigen::VectorXd primal;  // x'
  Eigen::VectorXd u;
  std::vector<int> basis;
};

inline Eigen::MatrixXd evaluate_B(const TwoStageInstance& inst, const Eigen::VectorXd& xi) {
  Eigen::MatrixXd Bm(static_cast<Eigen::Index>(inst.n2), static_cast<Eigen::Index>(inst.n1));
  for (std::size_t l = 0; l < inst.n2; ++l) {
    for (std::size_t j = 0; j < inst.n1; ++j) Bm(static_cast<Eigen::Index>(l), static_cast<Eigen::Index>(j)) = inst.B[l][j].evaluate(xi);
  }
  return Bm;
}

inline Eigen::VectorXd evaluate_vector(const std::vector<Polynomial>& ps, const Eigen::VectorXd& xi) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(ps.size()));
  for (std::size_t j = 0; j < ps.size(); ++j) v(static_cast<Eigen::Index>(j)) = ps[j].evaluate(xi);
  return v;
}

inline RecourseResult recourse_value(const TwoStageInstance& inst, const Eigen::VectorXd& x, const Eigen::VectorXd& xi) {
  check_point(x, inst.n1);
  conic::LinearProgram lp;
  lp.A = inst.A;
  lp.rhs = evaluate_B(inst, xi) * x + evaluate_vector(inst.b, xi);
  lp.c = evaluate_vector(inst.c, xi);
  const conic::LpSolution sol = conic::solve_lp(lp);
  RecourseResult res;
  res.status = sol.status;
  if (sol.status == conic::LpStatus::Optimal) {
    res.value = sol.value + inst.d.evaluate(xi);
    res.primal = sol.x;
    res.u = sol.duals;
    res.basis = sol.basis;
  } else if (sol.status == conic::LpStatus::Unbounded) {
    res.value = -std::numeric_limits<double>::infinity();
  }
  return res;
}

}  // namespace wdro
