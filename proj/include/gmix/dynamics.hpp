#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "activation.hpp"
#include "errors.hpp"
#include "mixture.hpp"
#include "moments.hpp"
#include "network.hpp"
#include "rng.hpp"

namespace gmix {

// Binned spectral density of Omega: representative eigenvalue rho_b and
// probability mass p_b per bin.
struct SpectrumGrid {
  Eigen::VectorXd rho;
  Eigen::VectorXd mass;

  int n_bins() const { return static_cast<int>(rho.size()); }

  void validate() const {
    if (rho.size() == 0 || rho.size() != mass.size()) throw domain_error("spectrum grid: empty or mismatched");
    if (mass.minCoeff() < 0.0) throw domain_error("spectrum grid: negative mass");
    if (std::abs(mass.sum() - 1.0) > 1e-10) throw domain_error("spectrum grid: masses do not sum to 1");
  }
};

struct OdeConfig {
  double lr = 0.0;
  double weight_decay = 0.0;
  Activation activation = Activation::relu;
  double dt = 0.05;
  std::size_t mc_samples = 10000;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(dt > 0.0)) throw domain_error("ode config: dt must be positive");
    if (!(lr >= 0.0)) throw domain_error("ode config: lr must be >= 0");
    if (mc_samples < 1) throw domain_error("ode config: mc_samples must be >= 1");
  }
};

// Order parameters resolved over the spectrum of Omega. Per bin b:
//   m[b](alpha, k) = (1/(D p_b)) sum_{tau in b} wt^k_tau mut^alpha_tau
//   q[b](k, l)     = (1/(D p_b)) sum_{tau in b} wt^k_tau wt^l_tau
//   t[b](a, b')    = (1/(D p_b)) sum_{tau in b} mut^a_tau mut^b'_tau
// with wt, mut the weights and means in the eigenbasis of Omega. Then
// M = sum_b p_b m[b], Q = sum_b p_b rho_b q[b], T = sum_b p_b t[b].
struct OrderParameterState {
  SpectrumGrid spectrum;
  std::vector<Eigen::MatrixXd> m;
  std::vector<Eigen::MatrixXd> q;
  Eigen::VectorXd v;
  Eigen::MatrixXd T;
  std::vector<Eigen::MatrixXd> T_density;
  double chi = 0.0;
  double t = 0.0;

  int K() const { return static_cast<int>(v.size()); }
  int n_bins() const { return spectrum.n_bins(); }
  int n_clusters() const { return static_cast<int>(T.rows()); }

  Eigen::MatrixXd M() const {
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(m[0].rows(), m[0].cols());
    for (int b = 0; b < n_bins(); ++b) out += spectrum.mass[b] * m[static_cast<std::size_t>(b)];
    return out;
  }

  Eigen::MatrixXd Q() const {
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(K(), K());
    for (int b = 0; b < n_bins(); ++b) out += (spectrum.mass[b] * spectrum.rho[b]) * q[static_cast<std::size_t>(b)];
    return out;
  }
};

namespace detail {
inline void mirror_upper(Eigen::MatrixXd& a) {
  for (Eigen::Index k = 0; k < a.rows(); ++k)
    for (Eigen::Index l = k + 1; l < a.cols(); ++l) a(l, k) = a(k, l);
}
}  // namespace detail

// Order parameters of a concrete network. Isotropic Omega uses a single bin;
// otherwise the eigenvalues (ascending) are split into n_bins equal-count bins.
inline OrderParameterState state_from_weights(const MixtureSpec& spec, const Eigen::MatrixXd& W,
                                              const Eigen::VectorXd& v, int n_bins = 100) {
  const int D = spec.dim;
  if (W.cols() != D) throw domain_error("state_from_weights: weight dimension does not match the mixture");
  OrderParameterState s;
  Eigen::MatrixXd mu = spec.means();
  s.v = v;
  s.T = spec.T();
  s.chi = spec.chi();
  if (spec.covariance.is_isotropic()) {
    s.spectrum.rho = Eigen::VectorXd::Constant(1, spec.covariance.sigma2());
    s.spectrum.mass = Eigen::VectorXd::Ones(1);
    s.m.push_back(mu.transpose() * W.transpose() / D);
    Eigen::MatrixXd q = W * W.transpose() / D;
    detail::mirror_upper(q);
    s.q.push_back(q);
    s.T_density.push_back(s.T);
    return s;
  }
  const Eigen::VectorXd& vals = spec.covariance.eigenvalues(D);
  const Eigen::MatrixXd& vecs = spec.covariance.eigenvectors();
  Eigen::MatrixXd wt = vecs.transpose() * W.transpose();  // D x K
  Eigen::MatrixXd mt = vecs.transpose() * mu;             // D x n_c
  int nb = std::max(1, std::min(n_bins, D));
  s.spectrum.rho.resize(nb);
  s.spectrum.mass.resize(nb);
  for (int b = 0; b < nb; ++b) {
    int lo = static_cast<int>(static_cast<long long>(b) * D / nb);
    int hi = static_cast<int>(static_cast<long long>(b + 1) * D / nb);
    int n = hi - lo;
    s.spectrum.rho[b] = vals.segment(lo, n).cwiseMax(0.0).mean();
    s.spectrum.mass[b] = static_cast<double>(n) / D;
    auto wb = wt.middleRows(lo, n);
    auto mb = mt.middleRows(lo, n);
    s.m.push_back(mb.transpose() * wb / n);
    Eigen::MatrixXd q = wb.transpose() * wb / n;
    detail::mirror_upper(q);
    s.q.push_back(q);
    Eigen::MatrixXd t = mb.transpose() * mb / n;
    detail::mirror_upper(t);
    s.T_density.push_back(t);
  }
  return s;
}

inline OrderParameterState init_state(const MixtureSpec& spec, int K, double sigma0, std::uint64_t seed,
                                      Activation act = Activation::relu, int n_bins = 100) {
  if (K < 1) throw domain_error("init_state: K must be >= 1");
  Rng rng(seed);
  TwoLayerNet net = TwoLayerNet::random(K, spec.dim, sigma0, act, rng);
  return state_from_weights(spec, net.W, net.v, n_bins);
}

// Symmetric square root of Q; fails as a divergence when Q is clearly not PSD.
inline Eigen::MatrixXd overlap_sqrt(const Eigen::MatrixXd& Q) {
  if (!Q.allFinite()) throw divergence_error("integration diverged: non-finite overlap matrix Q");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (Q + Q.transpose()));
  const Eigen::VectorXd& val = es.eigenvalues();
  double hi = std::max(val.maxCoeff(), 0.0);
  if (val.minCoeff() < -1e-8 * std::max(hi, 1.0))
    throw divergence_error("integration diverged: reconstructed Q not PSD (eigenvalue " +
                           std::to_string(val.minCoeff()) + ")");
  return es.eigenvectors() * val.cwiseMax(0.0).cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
}

// Per-cluster expectations by MC with common random numbers: one standard
// normal batch is shared by all clusters.
inline std::vector<FieldExpectations> mc_cluster_expectations(const OrderParameterState& s, const MixtureSpec& spec,
                                                              const OdeConfig& cfg, Rng& rng) {
  Eigen::MatrixXd M = s.M();
  Eigen::MatrixXd L = overlap_sqrt(s.Q());
  Eigen::Index pairs = std::max<Eigen::Index>(1, static_cast<Eigen::Index>(cfg.mc_samples / 2));
  Eigen::MatrixXd z = rng.normal_matrix(pairs, s.K());
  std::vector<FieldExpectations> out;
  out.reserve(spec.clusters.size());
  for (int a = 0; a < spec.n_clusters(); ++a)
    out.push_back(mc_field_expectations(M.row(a).transpose(), L, z, cfg.activation, s.v,
                                        static_cast<double>(spec.clusters[a].label)));
  return out;
}

namespace detail {
// Pseudo-inverse of [[a, b], [b, c]] with a relative eigenvalue cutoff.
inline Eigen::Matrix2d pinv_sym2(double a, double b, double c, double floor) {
  Eigen::Matrix2d m;
  m << a, b, b, c;
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(m);
  double hi = es.eigenvalues().cwiseAbs().maxCoeff();
  Eigen::Matrix2d out = Eigen::Matrix2d::Zero();
  for (int i = 0; i < 2; ++i) {
    double lam = es.eigenvalues()[i];
    if (lam > 1e-10 * hi && lam > floor) out += es.eigenvectors().col(i) * es.eigenvectors().col(i).transpose() / lam;
  }
  return out;
}
}  // namespace detail

// Coefficients G(k, l) of the linear regression of the cluster-alpha
// expectation E[F_k (lambda - M)] onto the local fields, where
// F_k = v_k g'(k) (phi - y). Each term only involves the fields it depends on
// (lambda_k, or the pair lambda_k, lambda_j), so the regressions use 1x1 and
// 2x2 blocks of Q.
inline Eigen::MatrixXd regression_matrix(const FieldExpectations& e, const Eigen::MatrixXd& Q,
                                         const Eigen::VectorXd& v, double y) {
  const int K = static_cast<int>(v.size());
  double floor = 1e-14 * std::max(1.0, Q.diagonal().cwiseAbs().maxCoeff());
  Eigen::MatrixXd G = Eigen::MatrixXd::Zero(K, K);
  for (int k = 0; k < K; ++k) {
    if (Q(k, k) > floor)
      G(k, k) += (-y * v[k] * e.dg_dev[k] + v[k] * v[k] * e.dg_g_dev_k(k, k)) / Q(k, k);
    for (int j = 0; j < K; ++j) {
      if (j == k) continue;
      Eigen::Matrix2d P = detail::pinv_sym2(Q(k, k), Q(k, j), Q(j, j), floor);
      Eigen::Vector2d rhs(e.dg_g_dev_k(k, j), e.dg_g_dev_j(k, j));
      Eigen::Vector2d beta = P * rhs;
      G(k, k) += v[k] * v[j] * beta[0];
      G(k, j) += v[k] * v[j] * beta[1];
    }
  }
  return G;
}

struct StateDerivative {
  std::vector<Eigen::MatrixXd> dm;
  std::vector<Eigen::MatrixXd> dq;
  std::vector<Eigen::MatrixXd> dq_noise;  // the eta^2 part of dq, also contained in dq
  Eigen::VectorXd dv;
};

// Right-hand side of the order-parameter equations given per-cluster
// expectations evaluated at the state.
inline StateDerivative vector_field(const OrderParameterState& s, const MixtureSpec& spec, const OdeConfig& cfg,
                                    const std::vector<FieldExpectations>& fe) {
  const double eta = cfg.lr, kappa = cfg.weight_decay;
  const int K = s.K(), nb = s.n_bins();
  Eigen::MatrixXd Q = s.Q();
  StateDerivative d;
  std::vector<Eigen::MatrixXd> lin(static_cast<std::size_t>(nb));
  for (int b = 0; b < nb; ++b) {
    d.dm.push_back(Eigen::MatrixXd::Zero(s.m[0].rows(), K));
    d.dq_noise.push_back(Eigen::MatrixXd::Zero(K, K));
    lin[static_cast<std::size_t>(b)] = Eigen::MatrixXd::Zero(K, K);
  }
  d.dv = Eigen::VectorXd::Zero(K);
  Eigen::MatrixXd vv = s.v * s.v.transpose();

  for (int a = 0; a < spec.n_clusters(); ++a) {
    const auto& e = fe[static_cast<std::size_t>(a)];
    const double P = spec.clusters[a].weight;
    const double y = spec.clusters[a].label;
    Eigen::VectorXd h = s.v.cwiseProduct(e.dg_g * s.v) - y * s.v.cwiseProduct(e.dg);
    Eigen::MatrixXd G = regression_matrix(e, Q, s.v, y);
    Eigen::MatrixXd noise = vv.cwiseProduct(e.noise);
    for (int b = 0; b < nb; ++b) {
      const auto bi = static_cast<std::size_t>(b);
      const double rho = s.spectrum.rho[b];
      d.dm[bi] -= (eta * P) * (s.T_density[bi].col(a) * h.transpose() + rho * s.m[bi] * G.transpose());
      lin[bi] -= (eta * P) * (h * s.m[bi].row(a) + rho * G * s.q[bi]);
      d.dq_noise[bi] += (eta * eta * rho * P) * noise;
    }
    d.dv += (eta * P) * (y * e.g - e.gg * s.v);
  }
  for (int b = 0; b < nb; ++b) {
    const auto bi = static_cast<std::size_t>(b);
    d.dm[bi] -= (eta * kappa) * s.m[bi];
    detail::mirror_upper(d.dq_noise[bi]);
    Eigen::MatrixXd dq = lin[bi] + lin[bi].transpose();
    dq += d.dq_noise[bi];
    dq -= (2.0 * eta * kappa) * s.q[bi];
    detail::mirror_upper(dq);
    d.dq.push_back(std::move(dq));
  }
  d.dv -= (eta * kappa) * s.v;
  return d;
}

inline OrderParameterState euler_update(const OrderParameterState& s, const StateDerivative& d, double dt) {
  OrderParameterState out = s;
  for (int b = 0; b < s.n_bins(); ++b) {
    const auto bi = static_cast<std::size_t>(b);
    out.m[bi] += dt * d.dm[bi];
    out.q[bi] += dt * d.dq[bi];
    detail::mirror_upper(out.q[bi]);
    if (!out.m[bi].allFinite() || !out.q[bi].allFinite())
      throw divergence_error("integration diverged at t = " + std::to_string(s.t));
  }
  out.v += dt * d.dv;
  if (!out.v.allFinite()) throw divergence_error("integration diverged at t = " + std::to_string(s.t));
  out.t = s.t + dt;
  return out;
}

inline OrderParameterState eom_step(const OrderParameterState& s, const MixtureSpec& spec, const OdeConfig& cfg,
                                    Rng& rng) {
  auto fe = mc_cluster_expectations(s, spec, cfg, rng);
  return euler_update(s, vector_field(s, spec, cfg, fe), cfg.dt);
}

struct Readout {
  double pmse = 0.0;
  double class_error = 0.0;
};

inline Readout readout_from_fields(const MixtureSpec& spec, const std::vector<FieldExpectations>& fe) {
  Readout r;
  for (int a = 0; a < spec.n_clusters(); ++a) {
    r.pmse += spec.clusters[a].weight * fe[static_cast<std::size_t>(a)].sq_error;
    r.class_error += spec.clusters[a].weight * fe[static_cast<std::size_t>(a)].class_error;
  }
  return r;
}

inline Readout readout_from_state(const OrderParameterState& s, const MixtureSpec& spec, const OdeConfig& cfg) {
  Rng rng(hash_combine(cfg.seed, 0x7265616430ULL));
  return readout_from_fields(spec, mc_cluster_expectations(s, spec, cfg, rng));
}

inline double pmse_from_state(const OrderParameterState& s, const MixtureSpec& spec, const OdeConfig& cfg) {
  return readout_from_state(s, spec, cfg).pmse;
}

inline double class_error_from_state(const OrderParameterState& s, const MixtureSpec& spec, const OdeConfig& cfg) {
  return readout_from_state(s, spec, cfg).class_error;
}

struct TrajectoryPoint {
  double t = 0.0;
  double pmse = 0.0;
  double class_error = 0.0;
  std::optional<OrderParameterState> snapshot;
};

struct ObserverSchedule {
  std::vector<double> times;  // observation times; rounded to the step grid
  bool keep_snapshots = false;
};

struct OdeTrajectory {
  std::vector<TrajectoryPoint> points;
  OrderParameterState final_state;
};

// Euler integration from s.t to t_max. Readouts at observation times reuse the
// expectations of the step taken from that state. The callback (if any) sees
// every state together with its step index.
inline OdeTrajectory integrate(const OrderParameterState& start, const MixtureSpec& spec, const OdeConfig& cfg,
                               double t_max, const ObserverSchedule& schedule = {},
                               const std::function<void(const OrderParameterState&)>& on_step = {}) {
  cfg.validate();
  OdeTrajectory traj;
  traj.final_state = start;
  if (!(t_max > start.t)) return traj;
  const long long n_steps = std::llround((t_max - start.t) / cfg.dt);
  std::vector<long long> marks;
  for (double tau : schedule.times) {
    long long i = std::llround((tau - start.t) / cfg.dt);
    if (i >= 0 && i <= n_steps) marks.push_back(i);
  }
  std::sort(marks.begin(), marks.end());
  marks.erase(std::unique(marks.begin(), marks.end()), marks.end());
  std::size_t next = 0;

  Rng rng(cfg.seed);
  OrderParameterState s = start;
  auto record = [&](const std::vector<FieldExpectations>& fe) {
    Readout r = readout_from_fields(spec, fe);
    TrajectoryPoint p{s.t, r.pmse, r.class_error, std::nullopt};
    if (schedule.keep_snapshots) p.snapshot = s;
    traj.points.push_back(std::move(p));
  };
  for (long long i = 0; i <= n_steps; ++i) {
    if (on_step) on_step(s);
    bool mark = next < marks.size() && marks[next] == i;
    if (i == n_steps) {
      if (mark) {
        Rng tail = rng.child(0x656e64ULL);
        record(mc_cluster_expectations(s, spec, cfg, tail));
      }
      break;
    }
    auto fe = mc_cluster_expectations(s, spec, cfg, rng);
    if (mark) {
      record(fe);
      ++next;
    }
    s = euler_update(s, vector_field(s, spec, cfg, fe), cfg.dt);
    s.t = start.t + (i + 1) * cfg.dt;
  }
  traj.final_state = std::move(s);
  return traj;
}

}  // namespace gmix
