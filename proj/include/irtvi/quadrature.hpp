#pragma once

#include "irtvi/autodiff.hpp"
#include "irtvi/error.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <numbers>
#include <string>

namespace irtvi {

// Sum_q weights[q] * f(nodes[q]) approximates the integral of f against the
// standard normal density. Exact for polynomials of degree < 2 * count.
struct QuadratureRule {
  Vector nodes;
  Vector weights;

  Eigen::Index count() const { return nodes.size(); }

  template <class F>
  double integrate(F&& f) const {
    double s = 0.0;
    for (Eigen::Index q = 0; q < count(); ++q) s += weights[q] * f(nodes[q]);
    return s;
  }
};

// Golub-Welsch: the physicists' Hermite nodes are the eigenvalues of the
// symmetric tridiagonal Jacobi matrix with off-diagonal sqrt(i / 2). The
// rule is then rescaled from weight exp(-x^2) to N(0, 1).
inline QuadratureRule gauss_hermite_rule(Eigen::Index count = 61) {
  if (count <= 0) throw InvalidInput("quadrature point count must be >= 1, got " +
                                     std::to_string(count));
  Matrix jacobi = Matrix::Zero(count, count);
  for (Eigen::Index i = 1; i < count; ++i) {
    const double b = std::sqrt(static_cast<double>(i) / 2.0);
    jacobi(i, i - 1) = b;
    jacobi(i - 1, i) = b;
  }
  Eigen::SelfAdjointEigenSolver<Matrix> solver(jacobi);
  QuadratureRule rule;
  rule.nodes = std::numbers::sqrt2 * solver.eigenvalues();
  // physicists' weight sqrt(pi) * v0^2, divided by sqrt(pi)
  rule.weights = solver.eigenvectors().row(0).transpose().cwiseAbs2();
  rule.weights /= rule.weights.sum();
  return rule;
}

}  // namespace irtvi
