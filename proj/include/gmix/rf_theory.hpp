#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include "activation.hpp"
#include "errors.hpp"
#include "mixture.hpp"
#include "quadrature.hpp"
#include "rng.hpp"

namespace gmix {

// a = E psi(sigma zeta), b = E zeta psi(sigma zeta), c2 = E psi(sigma zeta)^2,
// d2 = E zeta psi(sigma zeta)^2, zeta ~ N(0,1).
struct AbcConstants {
  double a = 0.0;
  double b = 0.0;
  double c2 = 0.0;
  double d2 = 0.0;
};

inline AbcConstants abc_constants(Activation act, double sigma, int n_nodes = 96) {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw domain_error("abc_constants: sigma must be finite and >= 0");
  AbcConstants k;
  if (act == Activation::relu) {
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    k.a = sigma * inv_sqrt_2pi;
    k.b = 0.5 * sigma;
    k.c2 = 0.5 * sigma * sigma;
    k.d2 = sigma * sigma * 2.0 * inv_sqrt_2pi;
    return k;
  }
  auto rule = gauss_hermite_normal(n_nodes);
  for (int i = 0; i < n_nodes; ++i) {
    double z = rule.nodes[i], w = rule.weights[i];
    double p = act_value(act, sigma * z);
    k.a += w * p;
    k.b += w * z * p;
    k.c2 += w * p * p;
    k.d2 += w * z * p * p;
  }
  return k;
}

// Moments of the features z = psi(F x / sqrt D) within each mixture component.
//
// Pre-activations u = F x / sqrt D are Gaussian within a component with
// covariance G = B B^T, B = F Omega^{1/2} / sqrt D. The feature covariance is
// stored in structured form:
//   cov_ij = var_i                                        (i == j)
//   cov_ij = t_i t_j G_ij + (L L^T)_ij + correction_ij    (i != j)
// The first two parts need O(PD) memory and admit a matrix-free product;
// correction (dense, zero diagonal) is optional.
struct ClusterFeatureMoments {
  Eigen::VectorXd mean;
  Eigen::VectorXd var;
  Eigen::VectorXd slope;
  Eigen::MatrixXd lowrank;     // P x r, r may be 0
  Eigen::MatrixXd correction;  // empty when absent
};

struct FeatureMoments {
  Eigen::MatrixXd B;  // P x D
  Eigen::VectorXd g_diag;
  std::vector<ClusterFeatureMoments> per_cluster;

  int P() const { return static_cast<int>(B.rows()); }
  int n_clusters() const { return static_cast<int>(per_cluster.size()); }

  Eigen::MatrixXd cov(int alpha) const {
    const auto& c = per_cluster.at(static_cast<std::size_t>(alpha));
    Eigen::MatrixXd Bt = c.slope.asDiagonal() * B;
    Eigen::MatrixXd C = Bt * Bt.transpose();
    if (c.lowrank.cols() > 0) C.noalias() += c.lowrank * c.lowrank.transpose();
    if (c.correction.size() > 0) C += c.correction;
    C.diagonal() = c.var;
    return C;
  }

  // sum_a coef_a cov_a x, with one pass over B for all clusters.
  Eigen::VectorXd apply_mixture(const Eigen::VectorXd& coef, const Eigen::VectorXd& x) const {
    const int n = n_clusters();
    Eigen::MatrixXd T(P(), n);
    for (int a = 0; a < n; ++a) T.col(a) = per_cluster[static_cast<std::size_t>(a)].slope.cwiseProduct(x);
    Eigen::MatrixXd BT = B.transpose() * T;
    Eigen::MatrixXd Y = B * BT;
    Eigen::VectorXd y = Eigen::VectorXd::Zero(P());
    for (int a = 0; a < n; ++a) {
      if (coef[a] == 0.0) continue;
      const auto& c = per_cluster[static_cast<std::size_t>(a)];
      Eigen::VectorXd ya = c.slope.cwiseProduct(Y.col(a) - g_diag.cwiseProduct(T.col(a)));
      if (c.lowrank.cols() > 0) {
        ya.noalias() += c.lowrank * (c.lowrank.transpose() * x);
        ya -= c.lowrank.rowwise().squaredNorm().cwiseProduct(x);
      }
      if (c.correction.size() > 0) ya.noalias() += c.correction * x;
      ya += c.var.cwiseProduct(x);
      y += coef[a] * ya;
    }
    return y;
  }

  Eigen::VectorXd apply_cov(int alpha, const Eigen::VectorXd& x) const {
    Eigen::VectorXd coef = Eigen::VectorXd::Zero(n_clusters());
    coef[alpha] = 1.0;
    return apply_mixture(coef, x);
  }

  Eigen::MatrixXd mean_matrix() const {
    Eigen::MatrixXd m(P(), n_clusters());
    for (int a = 0; a < n_clusters(); ++a) m.col(a) = per_cluster[static_cast<std::size_t>(a)].mean;
    return m;
  }

  void validate() const {
    for (const auto& c : per_cluster) {
      if (c.mean.size() != P() || c.var.size() != P() || c.slope.size() != P())
        throw validation_error("FeatureMoments: inconsistent sizes");
      if (c.lowrank.cols() > 0 && c.lowrank.rows() != P()) throw validation_error("FeatureMoments: bad low-rank term");
      if ((c.var.array() < 0.0).any()) throw validation_error("FeatureMoments: negative feature variance");
      if (!c.mean.allFinite() || !c.var.allFinite()) throw validation_error("FeatureMoments: non-finite moments");
    }
  }
};

namespace detail {

// Shifts F mu_a / D of the pre-activation means (P x n_clusters), then B.
// F is consumed so that large problems hold one P x D matrix.
inline FeatureMoments empty_moments(const MixtureSpec& spec, Eigen::MatrixXd F, Eigen::MatrixXd& shifts) {
  spec.validate();
  if (F.cols() != spec.dim) throw domain_error("feature matrix F must have D columns");
  if (F.rows() < 1) throw domain_error("feature matrix F must have at least one row");
  const double D = static_cast<double>(spec.dim);
  shifts = F * spec.means() / D;
  FeatureMoments fm;
  if (spec.covariance.kind() == CovarianceSpec::Kind::isotropic) {
    fm.B = std::move(F);
    fm.B *= std::sqrt(spec.covariance.sigma2() / D);
  } else {
    fm.B = spec.covariance.apply_sqrt(F) / std::sqrt(D);  // rows F_i Omega^{1/2}
  }
  fm.g_diag = fm.B.rowwise().squaredNorm();
  fm.per_cluster.resize(static_cast<std::size_t>(spec.n_clusters()));
  return fm;
}

}  // namespace detail

struct LowSnrOptions {
  bool include_d2 = false;  // subleading diagonal term
};

// Expansion for |mu|/sqrt D = O(1): features are a + b rho_i plus a shared
// covariance. sigma is the effective input scale sqrt(tr Omega / D).
inline FeatureMoments low_snr_moments(const MixtureSpec& spec, Eigen::MatrixXd F, Activation act,
                                      const LowSnrOptions& opt = {}) {
  Eigen::MatrixXd shifts;
  FeatureMoments fm = detail::empty_moments(spec, std::move(F), shifts);
  const int D = spec.dim;
  const double sigma = std::sqrt(spec.covariance.eigenvalues(D).sum() / D);
  const AbcConstants k = abc_constants(act, sigma);
  const int P = fm.P();
  const double slope = sigma > 0.0 ? k.b / sigma : 0.0;
  for (int a = 0; a < spec.n_clusters(); ++a) {
    auto& c = fm.per_cluster[static_cast<std::size_t>(a)];
    Eigen::VectorXd rho = Eigen::VectorXd::Zero(P);
    if (sigma > 0.0) rho = shifts.col(a) / sigma;
    c.mean = Eigen::VectorXd::Constant(P, k.a) + k.b * rho;
    c.var = Eigen::VectorXd::Constant(P, k.c2 - k.a * k.a);
    if (opt.include_d2) c.var += (k.d2 - 2.0 * k.a * k.b) * rho;
    c.var = c.var.cwiseMax(0.0);
    c.slope = Eigen::VectorXd::Constant(P, slope);
  }
  return fm;
}

enum class OffDiagonal {
  automatic,    // exact when P <= dense_limit, mean_field otherwise
  first_order,  // weak-correlation term t_i t_j G_ij only
  mean_field,   // plus the second-order term with G_ij^2 replaced by its average (rank one)
  exact,        // dense remainder by quadrature
};

struct ReluMomentOptions {
  OffDiagonal offdiagonal = OffDiagonal::automatic;
  int dense_limit = 4000;
  int quad_nodes = 16;
};

namespace detail {

// Bivariate standard normal density at (a, b) with correlation t.
inline double bvn_pdf(double a, double b, double t) {
  double s = 1.0 - t * t;
  return std::exp(-(a * a - 2.0 * t * a * b + b * b) / (2.0 * s)) / (2.0 * std::numbers::pi * std::sqrt(s));
}

// Average of G_ij^2 over i != j, over all pairs for small P and over a fixed
// band of pairs otherwise.
inline double mean_offdiag_square(const Eigen::MatrixXd& B) {
  const int P = static_cast<int>(B.rows());
  if (P < 2) return 0.0;
  double acc = 0.0;
  long long n = 0;
  const int band = P <= 512 ? P - 1 : 64;
  for (int k = 1; k <= band; ++k) {
    for (int i = 0; i < P; ++i) {
      int j = (i + k) % P;
      if (P <= 512 && j < i) continue;
      double g = B.row(i).dot(B.row(j));
      acc += g * g;
      ++n;
    }
  }
  return acc / static_cast<double>(n);
}

}  // namespace detail

// Exact ReLU feature moments. For u ~ N(s rho, s^2):
//   E relu(u)   = s [rho Phi(rho) + phi(rho)]
//   E relu(u)^2 = s^2 [(rho^2 + 1) Phi(rho) + rho phi(rho)]
// Off-diagonal: d/dr E[relu(u_i) relu(u_j)] = s_i s_j Phi_2(rho_i, rho_j; r),
// so cov_ij = s_i s_j [r Phi(rho_i) Phi(rho_j) + int_0^r (r - t) phi_2 dt].
// The first term is the weak-correlation result; the integral is the
// remainder, evaluated by Gauss-Legendre on [0, r]. Its leading part is
// G_ij^2 phi(rho_i) phi(rho_j) / (2 s_i s_j).
inline FeatureMoments relu_moments(const MixtureSpec& spec, Eigen::MatrixXd F, const ReluMomentOptions& opt = {}) {
  Eigen::MatrixXd shifts;
  FeatureMoments fm = detail::empty_moments(spec, std::move(F), shifts);
  const int P = fm.P();
  Eigen::VectorXd s = fm.g_diag.cwiseSqrt();
  if ((s.array() <= 0.0).any()) throw domain_error("relu_moments: a feature has zero pre-activation variance");
  OffDiagonal mode = opt.offdiagonal;
  if (mode == OffDiagonal::automatic) mode = P <= opt.dense_limit ? OffDiagonal::exact : OffDiagonal::mean_field;
  Eigen::MatrixXd R;
  QuadratureRule gl;
  double g2 = 0.0;
  if (mode == OffDiagonal::exact) {
    R = fm.B * fm.B.transpose();
    for (int j = 0; j < P; ++j)
      for (int i = 0; i < P; ++i) R(i, j) /= s[i] * s[j];
    gl = gauss_legendre(opt.quad_nodes);
  } else if (mode == OffDiagonal::mean_field) {
    g2 = detail::mean_offdiag_square(fm.B);
  }
  for (int a = 0; a < spec.n_clusters(); ++a) {
    auto& c = fm.per_cluster[static_cast<std::size_t>(a)];
    Eigen::VectorXd rho = shifts.col(a).cwiseQuotient(s);
    c.mean.resize(P);
    c.var.resize(P);
    c.slope.resize(P);
    for (int i = 0; i < P; ++i) {
      double r = rho[i], Phi = normal_cdf(r), phi = normal_pdf(r);
      double m = r * Phi + phi;
      double m2 = (r * r + 1.0) * Phi + r * phi;
      c.mean[i] = s[i] * m;
      c.var[i] = std::max(0.0, s[i] * s[i] * (m2 - m * m));
      c.slope[i] = Phi;
    }
    if (mode == OffDiagonal::mean_field) {
      c.lowrank.resize(P, 1);
      for (int i = 0; i < P; ++i) c.lowrank(i, 0) = std::sqrt(0.5 * g2) * normal_pdf(rho[i]) / s[i];
    }
    if (mode != OffDiagonal::exact) continue;
    c.correction = Eigen::MatrixXd::Zero(P, P);
    for (int j = 0; j < P; ++j) {
      for (int i = j + 1; i < P; ++i) {
        double r = R(i, j);
        if (r == 0.0) continue;
        double acc = 0.0;
        for (int q = 0; q < gl.nodes.size(); ++q) {
          double t = 0.5 * r * (gl.nodes[q] + 1.0);
          acc += gl.weights[q] * (r - t) * detail::bvn_pdf(rho[i], rho[j], t);
        }
        double v = s[i] * s[j] * 0.5 * r * acc;
        c.correction(i, j) = v;
        c.correction(j, i) = v;
      }
    }
  }
  return fm;
}

enum class Centering { mixture_mean, none };

struct AsymptoticOptions {
  Centering centering = Centering::mixture_mean;
  double rank_eps = 1e-10;  // relative to the largest eigenvalue
  int dense_limit = 2000;   // above this P, conjugate gradients on the structured covariance
  double cg_tol = 1e-10;
  int cg_max_iter = 5000;
};

struct ClusterField {
  double M = 0.0;
  double Q = 0.0;
};

// w_hat solves Omega^z w / sqrt P = Phi with the pseudo-inverse, which is the
// stationary point of online SGD on the half squared loss. pmse_inf uses the
// same half convention: 1/2 (E y^2 - Phi^T Omega^+ Phi).
struct RfAsymptotics {
  Eigen::VectorXd w_hat;
  Eigen::VectorXd center;
  double pmse_inf = 0.5;
  double class_error_inf = 0.5;
  std::vector<ClusterField> per_cluster;
  int rank = 0;
};

namespace detail {

inline Eigen::VectorXd mixture_center(const FeatureMoments& fm, const MixtureSpec& spec, Centering c) {
  if (c == Centering::none) return Eigen::VectorXd::Zero(fm.P());
  return fm.mean_matrix() * spec.weights();
}

}  // namespace detail

inline RfAsymptotics asymptotic_weights(const FeatureMoments& fm, const MixtureSpec& spec,
                                        const AsymptoticOptions& opt = {}) {
  fm.validate();
  if (fm.n_clusters() != spec.n_clusters()) throw domain_error("asymptotic_weights: cluster count mismatch");
  const int P = fm.P();
  const Eigen::VectorXd w = spec.weights();
  const Eigen::VectorXd y = spec.labels();
  RfAsymptotics out;
  out.center = detail::mixture_center(fm, spec, opt.centering);

  Eigen::MatrixXd V(P, spec.n_clusters());  // columns sqrt(P_a) (m_a - center)
  Eigen::VectorXd Phi = Eigen::VectorXd::Zero(P);
  for (int a = 0; a < spec.n_clusters(); ++a) {
    Eigen::VectorXd d = fm.per_cluster[static_cast<std::size_t>(a)].mean - out.center;
    V.col(a) = std::sqrt(w[a]) * d;
    Phi += w[a] * y[a] * d;
  }
  const double ey2 = w.dot(y.cwiseProduct(y));

  Eigen::VectorXd sol;  // Omega^+ Phi
  if (P <= opt.dense_limit) {
    Eigen::MatrixXd Om = V * V.transpose();
    for (int a = 0; a < spec.n_clusters(); ++a) Om += w[a] * fm.cov(a);
    Om = 0.5 * (Om + Om.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Om);
    if (es.info() != Eigen::Success) throw numerical_error("asymptotic_weights: eigendecomposition failed");
    const Eigen::VectorXd& ev = es.eigenvalues();
    double top = ev.cwiseAbs().maxCoeff();
    if (!(top > 0.0)) throw numerical_error("asymptotic_weights: feature covariance has rank zero");
    Eigen::VectorXd phit = es.eigenvectors().transpose() * Phi;
    Eigen::VectorXd inv = Eigen::VectorXd::Zero(P);
    for (int k = 0; k < P; ++k)
      if (ev[k] > opt.rank_eps * top) {
        inv[k] = 1.0 / ev[k];
        ++out.rank;
      }
    if (out.rank == 0) throw numerical_error("asymptotic_weights: feature covariance has rank zero");
    sol = es.eigenvectors() * inv.cwiseProduct(phit);
  } else {
    auto apply = [&](const Eigen::VectorXd& x) {
      Eigen::VectorXd r = V * (V.transpose() * x);
      r += fm.apply_mixture(w, x);
      return r;
    };
    Eigen::VectorXd diag = V.rowwise().squaredNorm();
    for (int a = 0; a < spec.n_clusters(); ++a) diag += w[a] * fm.per_cluster[static_cast<std::size_t>(a)].var;
    Eigen::VectorXd precond = diag.unaryExpr([](double d) { return d > 0.0 ? 1.0 / d : 1.0; });
    sol = Eigen::VectorXd::Zero(P);
    Eigen::VectorXd r = Phi, z = precond.cwiseProduct(r), p = z;
    double rz = r.dot(z), norm0 = Phi.norm();
    if (norm0 == 0.0) {
      out.w_hat = Eigen::VectorXd::Zero(P);
      out.pmse_inf = 0.5 * ey2;
      out.rank = P;
      return out;
    }
    int it = 0;
    for (; it < opt.cg_max_iter && r.norm() > opt.cg_tol * norm0; ++it) {
      Eigen::VectorXd Ap = apply(p);
      double pAp = p.dot(Ap);
      if (!(pAp > 0.0)) break;
      double alpha = rz / pAp;
      sol += alpha * p;
      r -= alpha * Ap;
      z = precond.cwiseProduct(r);
      double rz_new = r.dot(z);
      p = z + (rz_new / rz) * p;
      rz = rz_new;
    }
    if (r.norm() > 1e-6 * norm0)
      throw numerical_error("asymptotic_weights: conjugate gradients stalled at relative residual " +
                            std::to_string(r.norm() / norm0));
    out.rank = P;
  }
  out.w_hat = std::sqrt(static_cast<double>(P)) * sol;
  out.pmse_inf = std::clamp(0.5 * (ey2 - Phi.dot(sol)), 0.0, 0.5 * ey2);
  return out;
}

// eps_c = 1/2 (1 - sum_a P_a y_a erf(M_a / sqrt(2 Q_a))) with
// M_a = w.(m_a - center)/sqrt P and Q_a = w^T cov_a w / P.
inline double asymptotic_class_error(RfAsymptotics& asym, const FeatureMoments& fm, const MixtureSpec& spec) {
  const int P = fm.P();
  if (asym.w_hat.size() != P) throw domain_error("asymptotic_class_error: weight vector has wrong length");
  const Eigen::VectorXd w = spec.weights();
  const Eigen::VectorXd y = spec.labels();
  if (asym.center.size() != P) asym.center = Eigen::VectorXd::Zero(P);
  asym.per_cluster.assign(static_cast<std::size_t>(spec.n_clusters()), {});
  double acc = 0.0;
  for (int a = 0; a < spec.n_clusters(); ++a) {
    auto& cf = asym.per_cluster[static_cast<std::size_t>(a)];
    cf.M = asym.w_hat.dot(fm.per_cluster[static_cast<std::size_t>(a)].mean - asym.center) / std::sqrt(double(P));
    cf.Q = asym.w_hat.dot(fm.apply_cov(a, asym.w_hat)) / P;
    if (!(cf.Q > 0.0)) {
      if (cf.M == 0.0) continue;  // contributes erf(0) = 0
      throw numerical_error("asymptotic_class_error: degenerate variance Q = " + std::to_string(cf.Q) +
                            " for cluster " + std::to_string(a));
    }
    acc += w[a] * y[a] * std::erf(cf.M / std::sqrt(2.0 * cf.Q));
  }
  asym.class_error_inf = std::clamp(0.5 * (1.0 - acc), 0.0, 1.0);
  return asym.class_error_inf;
}

inline RfAsymptotics rf_asymptotics(const FeatureMoments& fm, const MixtureSpec& spec,
                                    const AsymptoticOptions& opt = {}) {
  RfAsymptotics r = asymptotic_weights(fm, spec, opt);
  asymptotic_class_error(r, fm, spec);
  return r;
}

// Kernel of infinitely many ReLU random features with x/sqrt D scaling:
// E_f relu(f.x/sqrt D) relu(f.y/sqrt D) for f ~ N(0, I_D).
inline double relu_kernel(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  if (x.size() != y.size()) throw domain_error("relu_kernel: size mismatch");
  double nx = x.norm(), ny = y.norm();
  if (!(nx > 0.0) || !(ny > 0.0)) throw domain_error("relu_kernel: zero-norm input");
  double c = std::clamp(x.dot(y) / (nx * ny), -1.0, 1.0);
  double s = std::sqrt(std::max(0.0, 1.0 - c * c));
  double D = static_cast<double>(x.size());
  return nx * ny / (4.0 * std::numbers::pi * D) * (2.0 * s + c * (std::numbers::pi + 2.0 * std::atan2(c, s)));
}

struct KernelAbcEstimate {
  double a2 = 0.0, b2 = 0.0, c2 = 0.0;
  double a2_se = 0.0, b2_se = 0.0, c2_se = 0.0;
};

using KernelFn = std::function<double(const Eigen::VectorXd&, const Eigen::VectorXd&)>;

// Monte Carlo over Gaussian probes omega. The linear coefficient b^2 is read
// off the antisymmetric combination
//   K(mu/sqrt D + s w1, mu/sqrt D + s w2) - K(mu/sqrt D + s w1, -mu/sqrt D + s w2)
//     = 2 b^2 / (D sigma^2) + O(D^{-3/2}),
// which cancels the second-order mean-shift term that is of the same order.
inline KernelAbcEstimate kernel_abc(const KernelFn& kernel, double sigma, const Eigen::VectorXd& mu, int D,
                                    int n_probes, Rng& rng) {
  if (mu.size() != D) throw domain_error("kernel_abc: mu must have length D");
  if (!(sigma > 0.0)) throw domain_error("kernel_abc: sigma must be positive");
  if (n_probes < 2) throw domain_error("kernel_abc: need at least two probes");
  const Eigen::VectorXd m = mu / std::sqrt(static_cast<double>(D));
  const double scale = D * sigma * sigma;
  double sa = 0, sa2 = 0, sb = 0, sb2 = 0, sc = 0, sc2 = 0;
  for (int n = 0; n < n_probes; ++n) {
    Eigen::VectorXd w1 = sigma * rng.normal_vector(D);
    Eigen::VectorXd w2 = sigma * rng.normal_vector(D);
    double c = kernel(w1, w1);
    double a = kernel(w1, w2);
    double b = 0.5 * scale * (kernel(m + w1, m + w2) - kernel(m + w1, -m + w2));
    sa += a; sa2 += a * a;
    sb += b; sb2 += b * b;
    sc += c; sc2 += c * c;
  }
  auto se = [n_probes](double s, double s2) {
    double mean = s / n_probes;
    return std::sqrt(std::max(0.0, (s2 / n_probes - mean * mean) / (n_probes - 1)));
  };
  KernelAbcEstimate e;
  e.a2 = sa / n_probes; e.a2_se = se(sa, sa2);
  e.b2 = sb / n_probes; e.b2_se = se(sb, sb2);
  e.c2 = sc / n_probes; e.c2_se = se(sc, sc2);
  if (e.b2 < -4.0 * e.b2_se - 1e-12)
    throw numerical_error("kernel_abc: negative b^2 estimate " + std::to_string(e.b2) + " beyond Monte Carlo error");
  return e;
}

}  // namespace gmix
