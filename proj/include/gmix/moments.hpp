#pragma once

#include <algorithm>
#include <array>
#include <limits>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "activation.hpp"
#include "errors.hpp"
#include "rng.hpp"

namespace gmix {

// Returns L (k x k) with L L^T = cov, via a symmetric eigendecomposition whose
// eigenvalues are clamped at zero. Negative eigenvalues below -tol*scale (or an
// absolute -tol when everything is tiny) mean the input is not a covariance.
inline Eigen::MatrixXd psd_factor(const Eigen::MatrixXd& cov, double tol = 1e-10) {
  if (cov.rows() != cov.cols()) throw numerical_error("covariance is not square");
  if (cov.size() == 0) return cov;
  if (!cov.allFinite()) throw numerical_error("covariance has non-finite entries");
  Eigen::MatrixXd sym = 0.5 * (cov + cov.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
  const Eigen::VectorXd& val = es.eigenvalues();
  double scale = std::max(1.0, val.cwiseAbs().maxCoeff());
  if (val.minCoeff() < -tol * scale)
    throw numerical_error("covariance not factorizable: eigenvalue " + std::to_string(val.minCoeff()));
  return es.eigenvectors() * val.cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

struct LocalFieldGaussian {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;

  int dim() const { return static_cast<int>(mean.size()); }

  void validate() const {
    if (cov.rows() != mean.size() || cov.cols() != mean.size())
      throw domain_error("local-field Gaussian: mean/cov size mismatch");
    if (mean.size() > 4) throw domain_error("local-field Gaussian: at most 4 fields supported");
    if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-12)
      throw domain_error("local-field Gaussian: covariance not symmetric");
  }

  Eigen::MatrixXd factor() const { return psd_factor(cov, 1e-10); }
};

// The Gaussian integrals of the order-parameter equations. Indices refer to
// positions in the LocalFieldGaussian.
//   I31(k)        E g'(k)
//   I32(k,j)      E g'(k) lambda_j
//   I3(k,j,l)     E g'(k) lambda_j g(l)
//   I22(k,j)      E g'(k) g(j)
//   I42(k,l)      E g'(k) g'(l)
//   I43(k,l,j)    E g'(k) g'(l) g(j)
//   I4(k,l,j,a)   E g'(k) g'(l) g(j) g(a)
struct IntegralId {
  enum class Kind { I31, I32, I3, I22, I42, I43, I4 };
  Kind kind = Kind::I31;
  std::array<int, 4> idx{};

  static IntegralId I31(int k) { return {Kind::I31, {k, 0, 0, 0}}; }
  static IntegralId I32(int k, int j) { return {Kind::I32, {k, j, 0, 0}}; }
  static IntegralId I3(int k, int j, int l) { return {Kind::I3, {k, j, l, 0}}; }
  static IntegralId I22(int k, int j) { return {Kind::I22, {k, j, 0, 0}}; }
  static IntegralId I42(int k, int l) { return {Kind::I42, {k, l, 0, 0}}; }
  static IntegralId I43(int k, int l, int j) { return {Kind::I43, {k, l, j, 0}}; }
  static IntegralId I4(int k, int l, int j, int a) { return {Kind::I4, {k, l, j, a}}; }

  int arity() const {
    switch (kind) {
      case Kind::I31: return 1;
      case Kind::I32: case Kind::I22: case Kind::I42: return 2;
      case Kind::I3: case Kind::I43: return 3;
      case Kind::I4: return 4;
    }
    return 0;
  }

  double evaluate(Activation act, const double* lam) const {
    auto g = [&](int i) { return act_value(act, lam[idx[i]]); };
    auto dg = [&](int i) { return act_derivative(act, lam[idx[i]]); };
    switch (kind) {
      case Kind::I31: return dg(0);
      case Kind::I32: return dg(0) * lam[idx[1]];
      case Kind::I3: return dg(0) * lam[idx[1]] * g(2);
      case Kind::I22: return dg(0) * g(1);
      case Kind::I42: return dg(0) * dg(1);
      case Kind::I43: return dg(0) * dg(1) * g(2);
      case Kind::I4: return dg(0) * dg(1) * g(2) * g(3);
    }
    return 0.0;
  }
};

struct McEstimate {
  double value = 0.0;
  double std_error = 0.0;
};

// Antithetic MC: z and -z are paired; the standard error is computed from the
// pair averages.
inline McEstimate mc_integral_with_error(const IntegralId& id, const LocalFieldGaussian& gauss, Activation act,
                                         std::size_t n_samples, Rng& rng) {
  gauss.validate();
  if (n_samples < 1) throw domain_error("mc_integral: n_samples must be >= 1");
  for (int i = 0; i < id.arity(); ++i)
    if (id.idx[i] < 0 || id.idx[i] >= gauss.dim()) throw domain_error("mc_integral: index outside the request dimension");
  const int k = gauss.dim();
  Eigen::MatrixXd L = gauss.factor();
  Eigen::VectorXd z(k), dev(k);
  std::array<double, 4> lp{}, lm{};
  const std::size_t pairs = n_samples / 2;
  double sum = 0.0, sum2 = 0.0;
  for (std::size_t s = 0; s < pairs; ++s) {
    rng.fill_normal(z);
    dev.noalias() = L * z;
    for (int i = 0; i < k; ++i) {
      lp[static_cast<std::size_t>(i)] = gauss.mean[i] + dev[i];
      lm[static_cast<std::size_t>(i)] = gauss.mean[i] - dev[i];
    }
    double f = 0.5 * (id.evaluate(act, lp.data()) + id.evaluate(act, lm.data()));
    sum += f;
    sum2 += f * f;
  }
  McEstimate out;
  if (n_samples % 2 == 1) {
    rng.fill_normal(z);
    dev.noalias() = L * z;
    for (int i = 0; i < k; ++i) lp[static_cast<std::size_t>(i)] = gauss.mean[i] + dev[i];
    double f = id.evaluate(act, lp.data());
    double n = static_cast<double>(n_samples);
    out.value = (2.0 * sum + f) / n;
    if (pairs > 1) {
      double mean = sum / pairs;
      double var = std::max(0.0, sum2 / pairs - mean * mean) * pairs / (pairs - 1.0);
      out.std_error = std::sqrt(var / pairs);
    }
    return out;
  }
  double mean = sum / static_cast<double>(pairs);
  out.value = mean;
  if (pairs > 1) {
    double var = std::max(0.0, sum2 / pairs - mean * mean) * pairs / (pairs - 1.0);
    out.std_error = std::sqrt(var / pairs);
  }
  return out;
}

inline double mc_integral(const IntegralId& id, const LocalFieldGaussian& gauss, Activation act,
                          std::size_t n_samples, Rng& rng) {
  return mc_integral_with_error(id, gauss, act, n_samples, rng).value;
}

// Everything the equations of motion need from one cluster, for all K neurons
// at once. Output phi = sum_k v_k g(lambda_k), label y.
struct FieldExpectations {
  Eigen::VectorXd g;           // E g(k)
  Eigen::MatrixXd gg;          // E g(k) g(j)
  Eigen::VectorXd dg;          // I31(k)
  Eigen::VectorXd dg_dev;      // E g'(k) (lambda_k - M_k)
  Eigen::MatrixXd dg_g;        // I22(k,j)
  Eigen::MatrixXd dg_g_dev_k;  // E g'(k) g(j) (lambda_k - M_k)
  Eigen::MatrixXd dg_g_dev_j;  // E g'(k) g(j) (lambda_j - M_j)
  Eigen::MatrixXd noise;       // E (phi - y)^2 g'(k) g'(l)
  double sq_error = 0.0;       // E (phi - y)^2
  double class_error = 0.0;    // P(y phi < 0) + P(phi = 0) / 2

  void resize(int K) {
    g.setZero(K);
    gg.setZero(K, K);
    dg.setZero(K);
    dg_dev.setZero(K);
    dg_g.setZero(K, K);
    dg_g_dev_k.setZero(K, K);
    dg_g_dev_j.setZero(K, K);
    noise.setZero(K, K);
    sq_error = 0.0;
    class_error = 0.0;
  }
};

// Batched MC estimate for lambda = mean + factor * z. Each row of z is one
// standard-normal draw (length factor.cols()); with antithetic = true every
// row is used with both signs.
inline FieldExpectations mc_field_expectations(const Eigen::VectorXd& mean, const Eigen::MatrixXd& factor,
                                               const Eigen::MatrixXd& z, Activation act, const Eigen::VectorXd& v,
                                               double y, bool antithetic = true) {
  const int K = static_cast<int>(mean.size());
  Eigen::MatrixXd half = z * factor.transpose();
  const Eigen::Index n = antithetic ? 2 * half.rows() : half.rows();
  Eigen::MatrixXd dev(n, K);
  if (antithetic) {
    dev.topRows(half.rows()) = half;
    dev.bottomRows(half.rows()) = -half;
  } else {
    dev = half;
  }
  Eigen::MatrixXd lam = dev.rowwise() + mean.transpose();
  Eigen::MatrixXd G, D;
  apply_activation(act, lam, G);
  apply_derivative(act, lam, D);
  const double inv = 1.0 / static_cast<double>(n);

  FieldExpectations e;
  e.g = G.colwise().mean().transpose();
  e.gg = G.transpose() * G * inv;
  e.gg = (0.5 * (e.gg + e.gg.transpose())).eval();
  e.dg = D.colwise().mean().transpose();
  Eigen::MatrixXd Ddev = D.cwiseProduct(dev);
  e.dg_dev = Ddev.colwise().mean().transpose();
  e.dg_g = D.transpose() * G * inv;
  e.dg_g_dev_k = Ddev.transpose() * G * inv;
  e.dg_g_dev_j = D.transpose() * G.cwiseProduct(dev) * inv;

  Eigen::VectorXd r = G * v;
  r.array() -= y;
  Eigen::MatrixXd Dr = r.asDiagonal() * D;
  e.noise = Dr.transpose() * Dr * inv;
  e.noise = (0.5 * (e.noise + e.noise.transpose())).eval();
  e.sq_error = r.squaredNorm() * inv;
  double err = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    double phi = r[i] + y;
    double s = y * phi;
    err += s < 0.0 ? 1.0 : (s == 0.0 ? 0.5 : 0.0);
  }
  e.class_error = err * inv;
  return e;
}

namespace detail {
// Integrals of r^{n+1} exp(-r^2/2) over [a, b] for n = 0, 1, 2; b < 0 means
// infinity.
struct RadialMoments {
  double r0, r1, r2;
};

inline RadialMoments radial_moments(double a, double b) {
  const double c = std::sqrt(std::numbers::pi / 2.0);
  double ea = std::exp(-0.5 * a * a);
  double eb = b < 0.0 ? 0.0 : std::exp(-0.5 * b * b);
  double bb = b < 0.0 ? 0.0 : b;
  double erf_b = b < 0.0 ? 1.0 : std::erf(b / std::numbers::sqrt2);
  RadialMoments m;
  m.r0 = ea - eb;
  m.r1 = a * ea - bb * eb + c * (erf_b - std::erf(a / std::numbers::sqrt2));
  m.r2 = a * a * ea - bb * bb * eb + 2.0 * m.r0;
  return m;
}
}  // namespace detail

// ReLU expectations for lambda = mean + basis * z with z ~ N(0, I_r), r <= 2.
// The angle of z is sampled on a stratified grid theta_i = 2 pi (i + offset)/n
// and the radial integral is done exactly: along a ray every ReLU is piecewise
// linear in r, so each piece contributes Gaussian radial moments. The result
// is a smooth function of mean and basis for a fixed offset, which is what a
// root finder on these expectations needs.
inline FieldExpectations radial_field_expectations(const Eigen::VectorXd& mean, const Eigen::MatrixXd& basis,
                                                   const Eigen::VectorXd& v, double y, int n_angles, double offset) {
  const int K = static_cast<int>(mean.size());
  if (basis.rows() != K || basis.cols() > 2) throw domain_error("radial expectations need a K x r basis with r <= 2");
  if (n_angles < 1) throw domain_error("radial expectations need at least one angle");
  Eigen::MatrixXd B = Eigen::MatrixXd::Zero(K, 2);
  B.leftCols(basis.cols()) = basis;

  FieldExpectations e;
  e.resize(K);
  Eigen::VectorXd d(K), a0(K), a1(K), act(K), gj(K), gj_r(K), dgj_r(K);
  std::vector<double> cuts;
  cuts.reserve(static_cast<std::size_t>(K) + 2);

  for (int i = 0; i < n_angles; ++i) {
    double th = 2.0 * std::numbers::pi * (i + offset) / n_angles;
    d = B.col(0) * std::cos(th) + B.col(1) * std::sin(th);
    cuts.assign(1, 0.0);
    for (int k = 0; k < K; ++k) {
      if (d[k] != 0.0) {
        double rk = -mean[k] / d[k];
        if (rk > 0.0) cuts.push_back(rk);
      }
    }
    std::sort(cuts.begin(), cuts.end());
    for (std::size_t s = 0; s < cuts.size(); ++s) {
      double a = cuts[s];
      bool last = s + 1 == cuts.size();
      double b = last ? -1.0 : cuts[s + 1];
      if (!last && b <= a) continue;
      double mid = last ? a + 1.0 : 0.5 * (a + b);
      for (int k = 0; k < K; ++k) act[k] = mean[k] + mid * d[k] > 0.0 ? 1.0 : 0.0;
      auto R = detail::radial_moments(a, b);
      a0 = act.cwiseProduct(mean);
      a1 = act.cwiseProduct(d);
      double e0 = v.dot(a0) - y, e1 = v.dot(a1);
      double S = e0 * e0 * R.r0 + 2.0 * e0 * e1 * R.r1 + e1 * e1 * R.r2;

      gj = a0 * R.r0 + a1 * R.r1;     // E_seg g(j)
      gj_r = a0 * R.r1 + a1 * R.r2;   // E_seg r g(j)
      dgj_r = d.cwiseProduct(gj_r);
      e.g += gj;
      e.gg.noalias() += a0 * gj.transpose();
      e.gg.noalias() += a1 * gj_r.transpose();
      e.dg += act * R.r0;
      e.dg_dev += a1 * R.r1;
      e.dg_g.noalias() += act * gj.transpose();
      e.dg_g_dev_k.noalias() += a1 * gj_r.transpose();
      e.dg_g_dev_j.noalias() += act * dgj_r.transpose();
      e.noise.noalias() += (act * S) * act.transpose();
      e.sq_error += S;

      // y * (phi0 + phi1 r) < 0 on part of the segment
      double p0 = y * (e0 + y), p1 = y * e1;
      double hi = last ? std::numeric_limits<double>::infinity() : b;
      if (p1 == 0.0) {
        if (p0 < 0.0) e.class_error += R.r0;
        else if (p0 == 0.0) e.class_error += 0.5 * R.r0;
      } else {
        double root = -p0 / p1;
        double lo_neg, hi_neg;
        if (p1 > 0.0) { lo_neg = a; hi_neg = std::min(hi, root); }
        else { lo_neg = std::max(a, root); hi_neg = hi; }
        if (hi_neg > lo_neg) {
          auto Rn = detail::radial_moments(lo_neg, std::isinf(hi_neg) ? -1.0 : hi_neg);
          e.class_error += Rn.r0;
        }
      }
    }
  }
  const double inv = 1.0 / n_angles;
  e.g *= inv; e.gg *= inv; e.dg *= inv; e.dg_dev *= inv; e.dg_g *= inv;
  e.dg_g_dev_k *= inv; e.dg_g_dev_j *= inv; e.noise *= inv;
  e.gg = (0.5 * (e.gg + e.gg.transpose())).eval();
  e.noise = (0.5 * (e.noise + e.noise.transpose())).eval();
  e.sq_error *= inv;
  e.class_error *= inv;
  return e;
}

// One-dimensional statistics of f(x) for x ~ N(mean_x, variance):
// mean = E f, dev = E[(x - mean_x) f(x)].
struct MarginalStats {
  double mean = 0.0;
  double dev = 0.0;
  double variance = 0.0;
};

// First-order expansion of E f(x) g(y) when the covariance eps*M12 of x and y
// is small.
inline double weak_corr_2pt(const MarginalStats& f, const MarginalStats& g, double eps_m12) {
  if (!(f.variance > 0.0) || !(g.variance > 0.0)) throw domain_error("weak_corr_2pt: variances must be positive");
  return f.mean * g.mean + f.dev * (eps_m12 / (f.variance * g.variance)) * g.dev;
}

// Joint statistics of f(x1) g(x2) where (x1, x2) have an O(1) covariance.
struct PairStats {
  double fg = 0.0;       // E f g
  double fg_dev1 = 0.0;  // E f g (x1 - mean1)
  double fg_dev2 = 0.0;  // E f g (x2 - mean2)
  double var1 = 0.0;
  double var2 = 0.0;
  double cov12 = 0.0;
};

// E f(x1) g(x2) h(x3) to first order in the small covariances eps*M13 and
// eps*M23 of x3 with (x1, x2).
inline double weak_corr_3pt(const PairStats& fg, const MarginalStats& h, double eps_m13, double eps_m23) {
  double det = fg.var1 * fg.var2 - fg.cov12 * fg.cov12;
  if (!(det > 0.0)) throw domain_error("weak_corr_3pt: degenerate (x1, x2) covariance");
  if (!(h.variance > 0.0)) throw domain_error("weak_corr_3pt: variance of x3 must be positive");
  double bracket = fg.fg_dev1 * eps_m13 * fg.var2 + fg.fg_dev2 * eps_m23 * fg.var1 -
                   fg.fg_dev1 * fg.cov12 * eps_m23 - fg.fg_dev2 * eps_m13 * fg.cov12;
  return fg.fg * h.mean + h.dev / (det * h.variance) * bracket;
}

}  // namespace gmix
