#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "dynamics.hpp"
#include "errors.hpp"
#include "mixture.hpp"
#include "moments.hpp"
#include "rng.hpp"

namespace gmix {

// Classification error of the nearest-mean classifier on the XOR mixture.
inline double oracle_error(double mu_norm_over_sqrtD, double sigma) {
  if (sigma == 0.0 && mu_norm_over_sqrtD > 0.0) return 0.0;
  if (!(sigma > 0.0)) throw domain_error("oracle_error: sigma must be positive");
  double e = std::erf(std::abs(mu_norm_over_sqrtD) / (2.0 * sigma));
  return 0.5 * (1.0 - e * e);
}

// Reduced description of a symmetric XOR fixed point with K neurons and
// h = K/2 free neurons. Clusters are ordered (+0, +1, -0, -1). For k < h:
//   M(+0, k) = a_k,  M(-0, k) = b_k,  M(+0, k+h) = b_k,  M(-0, k+h) = a_k,
// and M(+1, .) = -M(+0, .), M(-1, .) = -M(-0, .). The weights lie in the
// plane of the means, so Q = sigma^2 (M(+0)^T M(+0) + M(-0)^T M(-0)).
struct XorAnsatz {
  Eigen::VectorXd a;
  Eigen::VectorXd b;

  int K() const { return 2 * static_cast<int>(a.size()); }

  Eigen::VectorXd m_free() const {
    Eigen::VectorXd p(a.size() + b.size());
    p << a, b;
    return p;
  }

  static XorAnsatz from_free(const Eigen::VectorXd& p) {
    XorAnsatz s;
    const Eigen::Index h = p.size() / 2;
    s.a = p.head(h);
    s.b = p.tail(h);
    return s;
  }

  Eigen::MatrixXd M() const {
    const Eigen::Index h = a.size();
    Eigen::MatrixXd m(4, 2 * h);
    m.row(0) << a.transpose(), b.transpose();
    m.row(2) << b.transpose(), a.transpose();
    m.row(1) = -m.row(0);
    m.row(3) = -m.row(2);
    return m;
  }

  // K x 2 matrix B with lambda - M = B z, z ~ N(0, I_2), i.e. Q = B B^T.
  Eigen::MatrixXd field_basis(double sigma) const {
    Eigen::MatrixXd m = M();
    Eigen::MatrixXd B(K(), 2);
    B.col(0) = sigma * m.row(0).transpose();
    B.col(1) = sigma * m.row(2).transpose();
    return B;
  }

  Eigen::MatrixXd Q(double sigma) const {
    Eigen::MatrixXd B = field_basis(sigma);
    Eigen::MatrixXd q = B * B.transpose();
    detail::mirror_upper(q);
    return q;
  }

  // Second-layer weights giving output y_alpha on every cluster mean
  // (minimum-norm least squares).
  Eigen::VectorXd constrained_v(Activation act) const {
    Eigen::MatrixXd m = M();
    Eigen::MatrixXd g;
    apply_activation(act, m, g);
    Eigen::Vector4d y(1.0, 1.0, -1.0, -1.0);
    return g.completeOrthogonalDecomposition().solve(y);
  }
};

// How the second-layer weights are tied to the first-layer overlaps.
//   stationary: v is unknown too and solves dv/dt = 0 with the other equations.
//   output_constraint: v is fixed by requiring output y_alpha on each cluster
//   mean (minimum-norm least squares); only the dm equations are solved.
enum class SecondLayerRule { stationary, output_constraint };

struct FixedPointOptions {
  Activation activation = Activation::relu;
  SecondLayerRule v_rule = SecondLayerRule::stationary;
  int n_angles = 1024;             // relu: angular grid of the radial estimator
  std::size_t mc_samples = 10000;  // other activations: frozen MC sample size
  double tol = 1e-8;
  double damping = 0.5;            // initial relaxation step, in units of 1/eta
  int max_picard = 2000;
  double picard_switch = 1e-4;     // hand over to the secant solver below this residual
  int max_secant = 200;
  // Newton can land on a saddle of the restricted flow (the symmetric
  // starting point sits close to one). A converged root whose flow Jacobian
  // has an unstable eigenvalue is kicked along that direction and solved
  // again, at most max_escapes times.
  int max_escapes = 4;
  double escape_kick = 0.05;
  // Small weight decay makes the restricted flow very slow. Below this value
  // the solution is continued down from kappa = continuation_start in
  // geometric steps, each polished from the previous one (0 disables).
  double continuation_start = 1e-2;
  int continuation_steps_per_decade = 2;
  std::uint64_t seed = 0;
};

struct FixedPointResult {
  XorAnsatz ansatz;
  Eigen::VectorXd v;
  double residual_norm = 0.0;
  double pmse = 0.0;
  double class_error = 0.0;
  bool converged = false;
  int iterations = 0;
  OrderParameterState state;
};

// Evaluates the order-parameter equations on the ansatz manifold of one
// (K, sigma, eta, kappa) problem with frozen integration noise.
//
// Unknowns p = (a, b) for the output constraint and p = (a, b, v_half) for the
// stationary rule. A mirrored neuron responds to the opposite label, so its
// second-layer weight is the negative of its partner's.
class XorFixedPointProblem {
public:
  XorFixedPointProblem(int K, double sigma, double eta, double kappa, const FixedPointOptions& opt)
      : K_(K), sigma_(sigma), opt_(opt) {
    if (K < 4 || K % 2 != 0) throw domain_error("XOR fixed point needs an even K >= 4");
    if (!(sigma > 0.0)) throw domain_error("XOR fixed point needs sigma > 0");
    if (!(eta > 0.0)) throw domain_error("XOR fixed point needs eta > 0");
    if (!(kappa >= 0.0)) throw domain_error("XOR fixed point needs kappa >= 0");
    cfg_.lr = eta;
    cfg_.weight_decay = kappa;
    cfg_.activation = opt.activation;
    cfg_.seed = opt.seed;
    spec_ = build_xor_mixture(2, 1.0, sigma * sigma);
    Rng rng(opt.seed);
    offset_ = rng.uniform();
    if (opt.activation != Activation::relu)
      z_ = rng.normal_matrix(std::max<Eigen::Index>(1, static_cast<Eigen::Index>(opt.mc_samples / 2)), 2);
  }

  int K() const { return K_; }
  const MixtureSpec& spec() const { return spec_; }
  const OdeConfig& config() const { return cfg_; }
  SecondLayerRule rule() const { return opt_.v_rule; }
  Eigen::Index n_unknowns() const { return opt_.v_rule == SecondLayerRule::stationary ? 3 * K_ / 2 : K_; }

  XorAnsatz ansatz_of(const Eigen::VectorXd& p) const { return XorAnsatz::from_free(p.head(K_)); }

  Eigen::VectorXd v_of(const Eigen::VectorXd& p) const {
    if (opt_.v_rule == SecondLayerRule::output_constraint) return ansatz_of(p).constrained_v(opt_.activation);
    const int h = K_ / 2;
    Eigen::VectorXd v(K_);
    v << p.tail(h), -p.tail(h);
    return v;
  }

  Eigen::VectorXd pack(const XorAnsatz& s, const Eigen::VectorXd& v) const {
    Eigen::VectorXd p(n_unknowns());
    p.head(K_) = s.m_free();
    if (opt_.v_rule == SecondLayerRule::stationary) p.tail(K_ / 2) = v.head(K_ / 2);
    return p;
  }

  // Full order-parameter state of an ansatz (single spectral bin rho = sigma^2).
  OrderParameterState expand(const XorAnsatz& s, const Eigen::VectorXd& v) const {
    OrderParameterState st;
    st.spectrum.rho = Eigen::VectorXd::Constant(1, sigma_ * sigma_);
    st.spectrum.mass = Eigen::VectorXd::Ones(1);
    st.m.push_back(s.M());
    st.q.push_back(s.Q(sigma_) / (sigma_ * sigma_));
    st.v = v;
    Eigen::MatrixXd T(4, 4);
    T << 1, -1, 0, 0, -1, 1, 0, 0, 0, 0, 1, -1, 0, 0, -1, 1;
    st.T = T;
    st.T_density.push_back(T);
    st.chi = std::pow(sigma_, 4);
    return st;
  }

  std::vector<FieldExpectations> expectations(const XorAnsatz& s, const Eigen::VectorXd& v) const {
    Eigen::MatrixXd m = s.M();
    Eigen::MatrixXd B = s.field_basis(sigma_);
    std::vector<FieldExpectations> fe;
    for (int a = 0; a < 4; ++a) {
      double y = spec_.clusters[a].label;
      if (opt_.activation == Activation::relu)
        fe.push_back(radial_field_expectations(m.row(a).transpose(), B, v, y, opt_.n_angles, offset_));
      else
        fe.push_back(mc_field_expectations(m.row(a).transpose(), B, z_, opt_.activation, v, y));
    }
    return fe;
  }

  StateDerivative full_derivative(const XorAnsatz& s, const Eigen::VectorXd& v) const {
    return vector_field(expand(s, v), spec_, cfg_, expectations(s, v));
  }

  // The reduced equations: dm(+0, k) and dm(-0, k) for the free neurons (and
  // dv_k under the stationary rule), divided by eta so that the tolerance does
  // not depend on the learning rate.
  Eigen::VectorXd residual(const Eigen::VectorXd& p) const {
    XorAnsatz s = ansatz_of(p);
    Eigen::VectorXd v = v_of(p);
    StateDerivative d = full_derivative(s, v);
    const int h = K_ / 2;
    Eigen::VectorXd r(n_unknowns());
    r.segment(0, h) = d.dm[0].row(0).head(h).transpose();
    r.segment(h, h) = d.dm[0].row(2).head(h).transpose();
    if (opt_.v_rule == SecondLayerRule::stationary) r.tail(h) = d.dv.head(h);
    return r / cfg_.lr;
  }

  Readout readout(const XorAnsatz& s, const Eigen::VectorXd& v) const {
    return readout_from_fields(spec_, expectations(s, v));
  }

private:
  int K_;
  double sigma_;
  FixedPointOptions opt_;
  OdeConfig cfg_;
  MixtureSpec spec_;
  double offset_ = 0.5;
  Eigen::MatrixXd z_;
};

// Neurons alternate between the +e1 and -e1 directions with a small seeded
// tilt; their mirror images cover the two negative means.
inline XorAnsatz default_xor_init(int K, std::uint64_t seed) {
  Rng rng(hash_combine(seed, 0x696e6974ULL));
  const int h = K / 2;
  XorAnsatz s;
  s.a.resize(h);
  s.b.resize(h);
  for (int k = 0; k < h; ++k) {
    double tilt = 0.2 * (rng.uniform() - 0.5);
    double sign = k % 2 == 0 ? 1.0 : -1.0;
    s.a[k] = sign * std::cos(tilt);
    s.b[k] = std::sin(tilt);
  }
  return s;
}

namespace detail {

inline Eigen::MatrixXd fd_jacobian(const XorFixedPointProblem& prob, const Eigen::VectorXd& p,
                                   const Eigen::VectorXd& r0) {
  Eigen::MatrixXd J(r0.size(), p.size());
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    double h = 1e-6 * std::max(1.0, std::abs(p[i]));
    Eigen::VectorXd pp = p;
    pp[i] += h;
    J.col(i) = (prob.residual(pp) - r0) / h;
  }
  return J;
}

// Relaxation along the reduced flow, p <- p + tau r(p). Under the stationary
// rule this is explicit Euler on the restricted order-parameter dynamics, so
// it follows the attracting branch. tau grows while the residual shrinks and
// is halved on growth; a step of the minimum size is always taken so that
// transients of the flow can be crossed.
inline int relax(const XorFixedPointProblem& prob, Eigen::VectorXd& p, Eigen::VectorXd& r, double& rn,
                 const FixedPointOptions& opt) {
  const double tau_min = 1e-3 * opt.damping;
  double tau = opt.damping;
  int it = 0;
  for (; it < opt.max_picard && rn > opt.picard_switch && rn > opt.tol; ++it) {
    Eigen::VectorXd pn = p + tau * r;
    Eigen::VectorXd rnew = prob.residual(pn);
    double nn = rnew.norm();
    if (!std::isfinite(nn)) {
      if (tau <= tau_min) break;
      tau = std::max(0.5 * tau, tau_min);
      continue;
    }
    if (nn > rn && tau > tau_min) {
      tau = std::max(0.5 * tau, tau_min);
      continue;
    }
    p = pn;
    r = rnew;
    rn = nn;
    tau = std::min(tau * 1.2, 1e3 * opt.damping);
  }
  return it;
}

// Newton steps with a finite-difference Jacobian, Broyden updates in between
// and backtracking on the residual norm.
inline int polish(const XorFixedPointProblem& prob, Eigen::VectorXd& p, Eigen::VectorXd& r, double& rn,
                  const FixedPointOptions& opt) {
  Eigen::MatrixXd J;
  bool need_jacobian = true;
  bool fresh = false;
  int it = 0;
  for (; it < opt.max_secant && rn > opt.tol; ++it) {
    if (need_jacobian) {
      J = fd_jacobian(prob, p, r);
      need_jacobian = false;
      fresh = true;
    }
    Eigen::VectorXd step = -J.completeOrthogonalDecomposition().solve(r);
    double lambda = 1.0;
    bool accepted = false;
    Eigen::VectorXd pn, rnew;
    for (int ls = 0; ls < 30; ++ls) {
      pn = p + lambda * step;
      rnew = prob.residual(pn);
      if (std::isfinite(rnew.norm()) && rnew.norm() < (1.0 - 1e-4 * lambda) * rn) {
        accepted = true;
        break;
      }
      lambda *= 0.5;
    }
    if (!accepted) {
      if (fresh) break;
      need_jacobian = true;
      continue;
    }
    Eigen::VectorXd dp = pn - p, dr = rnew - r;
    J += (dr - J * dp) * dp.transpose() / dp.squaredNorm();
    fresh = false;
    p = pn;
    r = rnew;
    rn = r.norm();
  }
  return it;
}

// Plain explicit Euler on the flow with the initial step, used to leave a
// saddle: unlike relax() it accepts steps that increase the residual.
inline int follow_flow(const XorFixedPointProblem& prob, Eigen::VectorXd& p, Eigen::VectorXd& r, double& rn,
                       const FixedPointOptions& opt) {
  const double peak_floor = 10.0 * opt.picard_switch;
  double peak = rn;
  int it = 0;
  for (; it < opt.max_picard; ++it) {
    Eigen::VectorXd pn = p + opt.damping * r;
    Eigen::VectorXd rnew = prob.residual(pn);
    if (!std::isfinite(rnew.norm())) break;
    p = pn;
    r = rnew;
    rn = r.norm();
    peak = std::max(peak, rn);
    if (peak > peak_floor && rn < opt.picard_switch) break;
  }
  return it;
}

// Unit direction of the fastest-growing mode of the flow dp/dt = r(p) at p,
// or an empty vector when the linearisation is stable.
inline Eigen::VectorXd unstable_direction(const XorFixedPointProblem& prob, const Eigen::VectorXd& p,
                                          const Eigen::VectorXd& r) {
  Eigen::MatrixXd J = fd_jacobian(prob, p, r);
  Eigen::EigenSolver<Eigen::MatrixXd> es(J);
  if (es.info() != Eigen::Success) return {};
  const Eigen::VectorXcd& ev = es.eigenvalues();
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < ev.size(); ++i)
    if (ev[i].real() > ev[best].real()) best = i;
  double scale = std::max(1.0, ev.cwiseAbs().maxCoeff());
  if (!(ev[best].real() > 1e-6 * scale)) return {};
  Eigen::VectorXd d = es.eigenvectors().col(best).real();
  if (!(d.norm() > 0.0)) d = es.eigenvectors().col(best).imag();
  return d.normalized();
}

}  // namespace detail

// Relaxation along the restricted flow followed by a Newton/Broyden polish,
// with continuation in kappa for small weight decay. Under the output
// constraint the stationary solution is computed first and the constrained
// equations are then polished from that point.
inline FixedPointResult solve_xor_fixed_point(int K, double sigma, double eta, double kappa,
                                              const FixedPointOptions& opt = {},
                                              std::optional<XorAnsatz> init = std::nullopt) {
  XorAnsatz start = init ? *init : default_xor_init(K, opt.seed);
  if (start.K() != K) throw domain_error("solve_xor_fixed_point: initial ansatz has the wrong K");

  FixedPointOptions flow_opt = opt;
  flow_opt.v_rule = SecondLayerRule::stationary;

  std::vector<double> path;
  if (opt.continuation_start > 0.0 && kappa < opt.continuation_start) {
    double lo = std::max(kappa, 1e-12);
    int n = std::max(1, static_cast<int>(std::ceil(std::log10(opt.continuation_start / lo) *
                                                   opt.continuation_steps_per_decade)));
    for (int i = 0; i < n; ++i)
      path.push_back(opt.continuation_start * std::pow(lo / opt.continuation_start, double(i) / n));
  }
  path.push_back(kappa);

  Eigen::VectorXd p, r;
  double rn = 0.0;
  int it = 0;
  auto escape = [&](const XorFixedPointProblem& flow) {
    for (int e = 0; e < opt.max_escapes && rn <= opt.tol; ++e) {
      Eigen::VectorXd d = detail::unstable_direction(flow, p, r);
      if (d.size() == 0) break;
      const Eigen::VectorXd p_saddle = p, r_saddle = r;
      const double h = opt.escape_kick * std::max(1.0, p.norm());
      Eigen::VectorXd kicked = p + h * d;
      Eigen::VectorXd rk = flow.residual(kicked);
      // Follow the side of the saddle the flow moves away on.
      if (rk.dot(d) < 0.0) {
        kicked = p - h * d;
        rk = flow.residual(kicked);
      }
      p = kicked;
      r = rk;
      rn = r.norm();
      it += detail::follow_flow(flow, p, r, rn, flow_opt);
      it += detail::relax(flow, p, r, rn, flow_opt);
      it += detail::polish(flow, p, r, rn, flow_opt);
      if (rn > opt.tol) {
        p = p_saddle;
        r = r_saddle;
        rn = r.norm();
        break;
      }
    }
  };
  for (std::size_t stage = 0; stage < path.size(); ++stage) {
    XorFixedPointProblem flow(K, sigma, eta, path[stage], flow_opt);
    if (stage == 0) {
      p = flow.pack(start, start.constrained_v(opt.activation));
      r = flow.residual(p);
      rn = r.norm();
    } else {
      r = flow.residual(p);
      rn = r.norm();
      Eigen::VectorXd p0 = p;
      it += detail::polish(flow, p, r, rn, flow_opt);
      if (rn <= opt.tol) {
        escape(flow);
        continue;
      }
      p = p0;
      r = flow.residual(p);
      rn = r.norm();
    }
    it += detail::relax(flow, p, r, rn, flow_opt);
    it += detail::polish(flow, p, r, rn, flow_opt);
    escape(flow);
  }

  XorFixedPointProblem prob(K, sigma, eta, kappa, opt);
  if (opt.v_rule == SecondLayerRule::output_constraint) {
    p = p.head(K).eval();
    r = prob.residual(p);
    rn = r.norm();
    it += detail::polish(prob, p, r, rn, opt);
  }

  FixedPointResult res;
  res.ansatz = prob.ansatz_of(p);
  res.v = prob.v_of(p);
  res.residual_norm = rn;
  res.converged = rn <= opt.tol;
  res.iterations = it;
  Readout ro = prob.readout(res.ansatz, res.v);
  res.pmse = ro.pmse;
  res.class_error = ro.class_error;
  res.state = prob.expand(res.ansatz, res.v);
  return res;
}

}  // namespace gmix
