#pragma once

// Reference integrators used only by the tests. They share no code with the
// library's quadrature: plain trapezoid and Simpson rules on a truncated real
// line, with optional breakpoints at activation kinks.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

inline double phi(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }

// Composite Simpson on [a, b] with n (even) panels.
inline double simpson(const std::function<double(double)>& f, double a, double b, int n) {
  if (n % 2) ++n;
  const double h = (b - a) / n;
  double s = f(a) + f(b);
  for (int i = 1; i < n; ++i) s += (i % 2 ? 4.0 : 2.0) * f(a + i * h);
  return s * h / 3.0;
}

// E f(Z), Z ~ N(0, 1), splitting at the given points so that piecewise smooth
// integrands (ReLU, step derivatives) are integrated at full order.
inline double normal_expectation(const std::function<double(double)>& f, std::vector<double> breaks = {},
                                 int panels = 2000, double L = 12.0) {
  std::vector<double> pts{-L};
  std::sort(breaks.begin(), breaks.end());
  for (double b : breaks)
    if (b > -L && b < L) pts.push_back(b);
  pts.push_back(L);
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    double a = pts[i], b = pts[i + 1];
    int n = std::max(20, static_cast<int>(panels * (b - a) / (2 * L)));
    total += simpson([&](double z) { return phi(z) * f(z); }, a, b, n);
  }
  return total;
}

// E f(x1, x2) for a bivariate Gaussian, integrating x2 | x1 exactly at the
// kinks of x2 = 0 (ReLU-type integrands) and x1 at x1 = 0.
inline double bivariate_expectation(const Eigen::Vector2d& m, const Eigen::Matrix2d& C,
                                    const std::function<double(double, double)>& f, int panels = 1200) {
  const double s1 = std::sqrt(C(0, 0));
  const double l21 = C(1, 0) / s1;
  const double l22 = std::sqrt(std::max(0.0, C(1, 1) - l21 * l21));
  auto outer = [&](double z1) {
    const double x1 = m[0] + s1 * z1;
    const double base = m[1] + l21 * z1;
    if (l22 == 0.0) return f(x1, base);
    std::vector<double> br{-base / l22};
    return normal_expectation([&](double z2) { return f(x1, base + l22 * z2); }, br, panels);
  };
  return normal_expectation(outer, {-m[0] / s1}, panels);
}

// E f(x) for a Gaussian in up to three dimensions with a smooth integrand,
// by the tensor trapezoid rule in whitened coordinates (exponentially
// accurate for analytic integrands).
inline double smooth_expectation(const Eigen::VectorXd& m, const Eigen::MatrixXd& C,
                                 const std::function<double(const Eigen::VectorXd&)>& f, int n = 121, double L = 8.0) {
  const int d = static_cast<int>(m.size());
  Eigen::LLT<Eigen::MatrixXd> llt(C);
  Eigen::MatrixXd Lc = llt.matrixL();
  const double h = 2 * L / (n - 1);
  std::vector<double> z(n), w(n);
  for (int i = 0; i < n; ++i) {
    z[i] = -L + i * h;
    w[i] = h * phi(z[i]) * ((i == 0 || i == n - 1) ? 0.5 : 1.0);
  }
  Eigen::VectorXd u(d), x(d);
  double total = 0.0;
  std::vector<int> idx(d, 0);
  while (true) {
    double wt = 1.0;
    for (int k = 0; k < d; ++k) {
      u[k] = z[idx[k]];
      wt *= w[idx[k]];
    }
    x = m + Lc * u;
    total += wt * f(x);
    int k = 0;
    while (k < d && ++idx[k] == n) idx[k++] = 0;
    if (k == d) break;
  }
  return total;
}

}  // namespace oracle
