#pragma once

// Worked instances with known relaxation behaviour.

#include <Eigen/Dense>

#include "wdro/polybasis.hpp"
#include "wdro/relax.hpp"

namespace wdro::examples {

// X = {0}, Xi = [-1, 1]^2, one sample at the origin, F = xi1^3 + xi2. The
// DRO value is r for r < 1/2 and the k = 2 relaxation is exact.
inline SingleStageInstance separable() {
  const VariableNames joint{{"x", 1}, {"xi", 2}};
  const VariableNames xi{{"xi", 2}};
  SingleStageInstance s;
  s.n1 = 1;
  s.n0 = 2;
  s.f = Polynomial(1);
  s.F = parse_polynomial("xi1^3 + xi2", joint);
  s.h = {parse_polynomial("1 - xi1^2", xi), parse_polynomial("1 - xi2^2", xi)};
  s.samples = {Eigen::VectorXd::Zero(2)};
  s.H = Eigen::MatrixXd::Identity(2, 2);
  s.p = 2;
  s.lo = Eigen::VectorXd::Zero(1);
  s.hi = Eigen::VectorXd::Zero(1);
  s.support_bounded = true;
  return s;
}

// X = {0}, Xi = [0, inf)^3, one sample at (1, 1, 1) and a cost that is
// nonpositive on Xi; the inner relaxations are unbounded for every lambda.
inline SingleStageInstance motzkin_orthant() {
  const VariableNames joint{{"x", 1}, {"xi", 3}};
  const VariableNames xi{{"xi", 3}};
  SingleStageInstance s;
  s.n1 = 1;
  s.n0 = 3;
  s.f = Polynomial(1);
  s.F = parse_polynomial("3*xi1*xi2*xi3 - xi1^2*xi2 - xi1*xi2^2 - xi3^3", joint);
  s.h = {parse_polynomial("xi1", xi), parse_polynomial("xi2", xi), parse_polynomial("xi3", xi)};
  s.samples = {Eigen::VectorXd::Ones(3)};
  s.H = Eigen::MatrixXd::Identity(3, 3);
  s.p = 2;
  s.lo = Eigen::VectorXd::Zero(1);
  s.hi = Eigen::VectorXd::Zero(1);
  s.support_bounded = false;
  return s;
}

// X = {0}, Xi = [-1, 1], one sample at 0 and recourse max{-(1 - xi) u : u >= 0} = 0;
// the (xi, u) relaxations are unbounded for every lambda.
inline TwoStageInstance half_strip() {
  const VariableNames xi{{"xi", 1}};
  TwoStageInstance t;
  t.n1 = 1;
  t.n0 = 1;
  t.n2 = 1;
  t.m2 = 1;
  t.f = Polynomial(1);
  t.A = Eigen::MatrixXd::Constant(1, 1, -1.0);
  t.B = {{Polynomial(1)}};
  t.b = {parse_polynomial("-1 + xi1", xi)};
  t.c = {Polynomial(1)};
  t.d = Polynomial(1);
  t.h = {parse_polynomial("1 - xi1^2", xi)};
  t.samples = {Eigen::VectorXd::Zero(1)};
  t.H = Eigen::MatrixXd::Identity(1, 1);
  t.p = 2;
  t.lo = Eigen::VectorXd::Zero(1);
  t.hi = Eigen::VectorXd::Zero(1);
  t.support_bounded = true;
  return t;
}

}  // namespace wdro::examples
