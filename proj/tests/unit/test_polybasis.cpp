#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "wdro/polybasis.hpp"

using namespace wdro;

namespace {

MultiIndex mi(std::vector<int> e) { return MultiIndex(std::move(e)); }

Polynomial random_poly(std::mt19937_64& rng, std::size_t n, int deg, int terms) {
  std::uniform_int_distribution<int> e(0, deg);
  std::uniform_real_distribution<double> c(-2.0, 2.0);
  Polynomial p(n);
  for (int t = 0; t < terms; ++t) {
    std::vector<int> a(n, 0);
    int left = deg;
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = std::min(e(rng), left);
      left -= a[i];
    }
    p.add_term(MultiIndex(a), c(rng));
  }
  return p;
}

Eigen::VectorXd random_point(std::mt19937_64& rng, std::size_t n, double scale = 1.5) {
  std::uniform_real_distribution<double> u(-scale, scale);
  Eigen::VectorXd z(static_cast<Eigen::Index>(n));
  for (auto& v : z) v = u(rng);
  return z;
}

// Straightforward term-by-term evaluation with std::pow.
double eval_pow(const Polynomial& p, const Eigen::VectorXd& z) {
  double v = 0.0;
  for (const auto& [a, c] : p.terms()) {
    double m = c;
    for (std::size_t i = 0; i < a.nvars(); ++i) m *= std::pow(z(static_cast<Eigen::Index>(i)), a[i]);
    v += m;
  }
  return v;
}

bool rel_close(double a, double b, double tol) { return std::abs(a - b) <= tol * std::max({1.0, std::abs(a), std::abs(b)}); }

}  // namespace

TEST(EnumerateBasis, TwoVarsDegreeTwoOrder) {
  const MonomialBasis b = enumerate_basis(2, 2);
  const std::vector<MultiIndex> want{mi({0, 0}), mi({1, 0}), mi({0, 1}), mi({2, 0}), mi({1, 1}), mi({0, 2})};
  ASSERT_EQ(b.size(), want.size());
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_EQ(b[i], want[i]) << i;
}

TEST(EnumerateBasis, ConstantBasis) {
  const MonomialBasis b = enumerate_basis(1, 0);
  ASSERT_EQ(b.size(), 1u);
  EXPECT_EQ(b[0], mi({0}));
}

TEST(EnumerateBasis, ThreeVarsDegreeTwoHasTen) { EXPECT_EQ(enumerate_basis(3, 2).size(), 10u); }

TEST(EnumerateBasis, RejectsBadArguments) {
  EXPECT_THROW(enumerate_basis(0, 2), std::invalid_argument);
  EXPECT_THROW(enumerate_basis(2, -1), std::invalid_argument);
}

TEST(EnumerateBasis, CardinalityAndStrictOrder) {
  for (std::size_t n = 1; n <= 5; ++n) {
    for (int t = 0; t <= 6; ++t) {
      const MonomialBasis b = enumerate_basis(n, t);
      EXPECT_EQ(b.size(), binomial(n + static_cast<std::size_t>(t), static_cast<std::size_t>(t))) << n << " " << t;
      for (std::size_t i = 1; i < b.size(); ++i) ASSERT_LT(b[i - 1], b[i]);
      for (std::size_t i = 0; i < b.size(); ++i) ASSERT_EQ(b.index_of(b[i]), i);
    }
  }
}

TEST(MultiIndex, DegreeIsSum) {
  EXPECT_EQ(mi({3, 0, 2}).degree(), 5);
  EXPECT_THROW(mi({1, -1}), std::invalid_argument);
}

TEST(PolyArith, ProductOfConjugates) {
  const Polynomial x = Polynomial::variable(1, 0);
  const Polynomial one = Polynomial::constant(1, 1.0);
  const Polynomial p = mul(x + one, x - one);
  Polynomial want(1);
  want.add_term(mi({2}), 1.0);
  want.add_term(mi({0}), -1.0);
  EXPECT_EQ(p, want);
}

TEST(PolyArith, PartialDerivative) {
  const VariableNames names{{"xi", 2}};
  const Polynomial p = parse_polynomial("xi1^3 + xi2", names);
  EXPECT_EQ(partial_derivative(p, 0), parse_polynomial("3*xi1^2", names));
}

TEST(PolyArith, AdditiveInverseIsZero) {
  std::mt19937_64 rng(3);
  const Polynomial p = random_poly(rng, 3, 4, 8);
  const Polynomial z = add(p, scale(p, -1.0));
  EXPECT_TRUE(z.is_zero());
  EXPECT_EQ(z.degree(), 0);
}

TEST(PolyArith, ProductDegreeAdds) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const Polynomial p = random_poly(rng, 3, 3, 5), q = random_poly(rng, 3, 4, 5);
    if (p.is_zero() || q.is_zero()) continue;
    EXPECT_EQ(mul(p, q).degree(), p.degree() + q.degree());
  }
}

TEST(PolyArith, MismatchedVariableCounts) {
  EXPECT_THROW(Polynomial::variable(2, 0) + Polynomial::variable(3, 0), std::invalid_argument);
  EXPECT_THROW(Polynomial::variable(2, 0) * Polynomial::variable(3, 0), std::invalid_argument);
}

TEST(PolyArith, CanonicalFormHasNoZeros) {
  Polynomial p(2);
  p.add_term(mi({1, 0}), 1.0);
  p.add_term(mi({1, 0}), -1.0);
  EXPECT_TRUE(p.is_zero());
  p.add_term(mi({0, 1}), 1e-16);
  EXPECT_TRUE(p.is_zero());
}

TEST(Evaluate, SeparableAtOrigin) {
  const Polynomial p = parse_polynomial("xi1^3 + xi2", VariableNames{{"xi", 2}});
  EXPECT_EQ(p.evaluate(Eigen::Vector2d(0, 0)), 0.0);
}

TEST(Evaluate, Constant) {
  const Polynomial p = Polynomial::constant(3, 5.0);
  EXPECT_EQ(p.evaluate(Eigen::Vector3d(1.2, -4, 7)), 5.0);
}

TEST(Evaluate, AmGmEqualityCase) {
  const Polynomial p = parse_polynomial("3*xi1*xi2*xi3 - xi1^2*xi2 - xi1*xi2^2 - xi3^3", VariableNames{{"xi", 3}});
  EXPECT_EQ(p.evaluate(Eigen::Vector3d(1, 1, 1)), 0.0);
}

TEST(Evaluate, DimensionMismatch) {
  EXPECT_THROW(Polynomial::variable(2, 0).evaluate(Eigen::Vector3d(1, 2, 3)), std::invalid_argument);
}

TEST(Translate, SquareShiftedByOne) {
  const VariableNames n{{"xi", 1}};
  EXPECT_EQ(translate(parse_polynomial("xi1^2", n), Eigen::VectorXd::Ones(1)), parse_polynomial("xi1^2 + 2*xi1 + 1", n));
}

TEST(Translate, ZeroShiftIsIdentity) {
  std::mt19937_64 rng(7);
  const Polynomial p = random_poly(rng, 3, 4, 10);
  EXPECT_EQ(translate(p, Eigen::VectorXd::Zero(3)), p);
}

TEST(Translate, BinomialQuartic) {
  const VariableNames n{{"xi", 1}};
  const Polynomial p = pow(parse_polynomial("xi1 - 1", n), 4);
  EXPECT_EQ(translate(p, Eigen::VectorXd::Ones(1)), parse_polynomial("xi1^4", n));
}

TEST(Translate, DimensionMismatch) {
  EXPECT_THROW(translate(Polynomial::variable(2, 0), Eigen::VectorXd::Ones(3)), std::invalid_argument);
}

TEST(Translate, RoundTripAndDegree) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const Polynomial p = random_poly(rng, 3, 4, 6);
    const Eigen::VectorXd s = random_point(rng, 3);
    const Polynomial t = translate(p, s);
    EXPECT_EQ(t.degree(), p.degree());
    const Polynomial back = translate(t, Eigen::VectorXd(-s));
    const Eigen::VectorXd z = random_point(rng, 3);
    EXPECT_TRUE(rel_close(back.evaluate(z), p.evaluate(z), 1e-10));
  }
}

TEST(DistancePower, EuclideanSquareAtOrigin) {
  const Polynomial q = distance_power(Eigen::Vector2d(0, 0), Eigen::Matrix2d::Identity(), 2);
  EXPECT_EQ(q, parse_polynomial("xi1^2 + xi2^2", VariableNames{{"xi", 2}}));
}

TEST(DistancePower, VanishesAtCentre) {
  std::mt19937_64 rng(13);
  const Eigen::VectorXd c = random_point(rng, 3);
  const Polynomial q = distance_power(c, Eigen::Matrix3d::Identity(), 2);
  EXPECT_NEAR(q.evaluate(c), 0.0, 1e-12);
}

TEST(DistancePower, ScaledQuartic) {
  const Polynomial q = distance_power(Eigen::VectorXd::Zero(1), Eigen::MatrixXd::Constant(1, 1, 4.0), 4);
  EXPECT_EQ(q, parse_polynomial("16*xi1^4", VariableNames{{"xi", 1}}));
  EXPECT_EQ(q.degree(), 4);
}

TEST(DistancePower, Errors) {
  EXPECT_THROW(distance_power(Eigen::Vector2d(0, 0), Eigen::Matrix2d::Identity(), 3), std::invalid_argument);
  Eigen::Matrix2d indefinite;
  indefinite << 1, 0, 0, -1;
  EXPECT_THROW(distance_power(Eigen::Vector2d(0, 0), indefinite, 2), std::invalid_argument);
}

TEST(PolyProperty, ProductEvaluatesToProduct) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    const Polynomial p = random_poly(rng, 3, 4, 6), q = random_poly(rng, 3, 4, 6);
    const Eigen::VectorXd z = random_point(rng, 3);
    EXPECT_TRUE(rel_close(mul(p, q).evaluate(z), p.evaluate(z) * q.evaluate(z), 1e-12));
  }
}

TEST(PolyProperty, TranslateMatchesShiftedEvaluation) {
  std::mt19937_64 rng(19);
  for (int trial = 0; trial < 200; ++trial) {
    const Polynomial p = random_poly(rng, 3, 5, 6);
    const Eigen::VectorXd s = random_point(rng, 3), z = random_point(rng, 3);
    EXPECT_TRUE(rel_close(translate(p, s).evaluate(z), eval_pow(p, Eigen::VectorXd(z + s)), 1e-12));
  }
}

TEST(PolyProperty, DistancePowerMatchesMatrixArithmetic) {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + trial % 3;
    const Eigen::MatrixXd R = Eigen::MatrixXd::Random(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    const Eigen::MatrixXd H = R * R.transpose() + 0.5 * Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    const Eigen::VectorXd c = random_point(rng, n), z = random_point(rng, n);
    for (int p : {2, 4, 6}) {
      const double quad = (z - c).dot(H * (z - c));
      EXPECT_TRUE(rel_close(distance_power(c, H, p).evaluate(z), std::pow(quad, p / 2), 1e-10));
    }
  }
}

TEST(TextForm, ParsePrintRoundTrip) {
  const VariableNames names{{"xi", 2}, {"u", 2}};
  std::mt19937_64 rng(29);
  for (int trial = 0; trial < 50; ++trial) {
    const Polynomial p = random_poly(rng, 4, 4, 6);
    const Polynomial q = parse_polynomial(to_string(p, names), names);
    const Eigen::VectorXd z = random_point(rng, 4);
    EXPECT_TRUE(rel_close(p.evaluate(z), q.evaluate(z), 1e-12));
    EXPECT_EQ(p.size(), q.size());
  }
}

TEST(TextForm, BlockNames) {
  const VariableNames names{{"xi", 1}, {"u", 1}};
  const Polynomial p = parse_polynomial("-1 + xi1 - 2.5*xi1*u1^2", names);
  EXPECT_DOUBLE_EQ(p.evaluate(Eigen::Vector2d(2.0, 3.0)), -1 + 2 - 2.5 * 2 * 9);
}

TEST(TextForm, RejectsUnknownVariable) {
  EXPECT_THROW(parse_polynomial("xi3 + 1", VariableNames{{"xi", 2}}), ParseError);
  EXPECT_THROW(parse_polynomial("xi1 +", VariableNames{{"xi", 2}}), ParseError);
}

TEST(Substitute, PrefixAndEmbed) {
  const VariableNames joint{{"x", 1}, {"xi", 2}};
  const Polynomial F = parse_polynomial("x1*xi1 + x1^2 + xi2", joint);
  const double x = 3.0;
  const Polynomial Fx = substitute_prefix(F, std::span<const double>(&x, 1));
  EXPECT_EQ(Fx, parse_polynomial("3*xi1 + 9 + xi2", VariableNames{{"xi", 2}}));
  const Polynomial e = embed(Fx, 4, 1);
  EXPECT_DOUBLE_EQ(e.evaluate(Eigen::Vector4d(100, 1, 2, 100)), 3 + 9 + 2);
}

TEST(Substitute, AffineMatchesComposition) {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    const Polynomial p = random_poly(rng, 3, 4, 6);
    const Eigen::VectorXd s = random_point(rng, 3), d = random_point(rng, 3), z = random_point(rng, 3);
    const Polynomial q = affine_substitute(p, std::span<const double>(s.data(), 3), std::span<const double>(d.data(), 3));
    EXPECT_TRUE(rel_close(q.evaluate(z), eval_pow(p, Eigen::VectorXd(s + d.cwiseProduct(z))), 1e-11));
  }
}
