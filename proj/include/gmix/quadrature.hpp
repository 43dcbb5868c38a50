#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <numbers>

#include "errors.hpp"

namespace gmix {

struct QuadratureRule {
  Eigen::VectorXd nodes;
  Eigen::VectorXd weights;
};

namespace detail {

// Golub-Welsch: nodes are the eigenvalues of the symmetric Jacobi matrix,
// weights are mu0 times the squared first components of the eigenvectors.
inline QuadratureRule golub_welsch(const Eigen::VectorXd& offdiag, int n, double mu0) {
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i + 1 < n; ++i) J(i, i + 1) = J(i + 1, i) = offdiag[i];
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
  QuadratureRule r;
  r.nodes = es.eigenvalues();
  r.weights = mu0 * es.eigenvectors().row(0).transpose().array().square();
  return r;
}

}  // namespace detail

// Nodes and weights for E f(zeta), zeta ~ N(0,1) (probabilists' Hermite).
inline QuadratureRule gauss_hermite_normal(int n) {
  if (n < 1) throw domain_error("gauss_hermite_normal: need at least one node");
  Eigen::VectorXd off(n > 1 ? n - 1 : 0);
  for (int i = 0; i + 1 < n; ++i) off[i] = std::sqrt(static_cast<double>(i + 1));
  return detail::golub_welsch(off, n, 1.0);
}

// Nodes and weights for the integral over [-1, 1].
inline QuadratureRule gauss_legendre(int n) {
  if (n < 1) throw domain_error("gauss_legendre: need at least one node");
  Eigen::VectorXd off(n > 1 ? n - 1 : 0);
  for (int i = 0; i + 1 < n; ++i) {
    double k = i + 1.0;
    off[i] = k / std::sqrt(4.0 * k * k - 1.0);
  }
  return detail::golub_welsch(off, n, 2.0);
}

inline double normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }
inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

}  // namespace gmix
