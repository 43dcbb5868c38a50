#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "activation.hpp"
#include "errors.hpp"
#include "json.hpp"
#include "mixture.hpp"
#include "network.hpp"
#include "rng.hpp"

namespace gmix {

// Random-feature model phi(x) = w . psi(F x / sqrt D) / sqrt P.
struct RfModel {
  Eigen::MatrixXd F;  // P x D, fixed
  Eigen::VectorXd w;
  Activation activation = Activation::relu;

  int P() const { return static_cast<int>(F.rows()); }
  int dim() const { return static_cast<int>(F.cols()); }

  static RfModel random(int P, int dim, Rng& rng, Activation act = Activation::relu) {
    RfModel m;
    m.activation = act;
    m.F.resize(P, dim);
    for (int i = 0; i < P; ++i)
      for (int r = 0; r < dim; ++r) m.F(i, r) = rng.normal();
    m.w = Eigen::VectorXd::Zero(P);
    return m;
  }

  // Rows of the returned matrix are the features of the rows of x.
  Eigen::MatrixXd features(const Eigen::MatrixXd& x) const {
    Eigen::MatrixXd u = x * F.transpose() / std::sqrt(static_cast<double>(dim()));
    Eigen::MatrixXd z;
    apply_activation(activation, u, z);
    return z;
  }

  Eigen::VectorXd predict(const Eigen::MatrixXd& x) const {
    return features(x) * w / std::sqrt(static_cast<double>(P()));
  }
};

struct TrainConfig {
  double lr = 0.0;
  double weight_decay = 0.0;
  long long steps = 0;
  long long eval_every = 0;  // 0: evaluate only at the start and the end
  std::vector<long long> eval_steps;  // additional evaluation steps
  long long eval_set_size = 10000;
  std::uint64_t seed = 0;
  // train_rf only: when >= 0, the returned readout is the average of the
  // iterates after this step (tail averaging removes the constant-rate noise).
  long long average_from = -1;

  void validate() const {
    if (!(lr >= 0.0)) throw domain_error("train config: lr must be >= 0");
    if (!(weight_decay >= 0.0)) throw domain_error("train config: weight_decay must be >= 0");
    if (steps < 0) throw domain_error("train config: steps must be >= 0");
    if (eval_every < 0) throw domain_error("train config: eval_every must be >= 0");
    if (eval_set_size < 1) throw domain_error("train config: eval_set_size must be >= 1");
    if (average_from >= steps && steps > 0) throw domain_error("train config: average_from must be < steps");
  }
};

struct ErrorEstimate {
  double pmse = 0.0;
  double class_error = 0.0;
};

struct SimPoint {
  double t = 0.0;  // steps / D
  long long step = 0;
  double pmse = 0.0;
  double class_error = 0.0;
};

// pmse and classification error of a model on n_test fresh samples; sign(0)
// counts as half an error.
template <class Model>
ErrorEstimate measure_errors(const Model& model, const MixtureSpec& spec, long long n_test, std::uint64_t seed) {
  if (n_test < 1) throw domain_error("measure_errors: n_test must be >= 1");
  Rng rng(seed);
  ErrorEstimate e;
  const long long chunk = 4096;
  for (long long done = 0; done < n_test; done += chunk) {
    long long n = std::min(chunk, n_test - done);
    SampleBatch b = sample_batch(spec, n, rng);
    Eigen::VectorXd phi = model.predict(b.x);
    for (long long i = 0; i < n; ++i) {
      double r = phi[i] - b.y[i];
      e.pmse += r * r;
      double s = b.y[i] * phi[i];
      e.class_error += s < 0.0 ? 1.0 : (s == 0.0 ? 0.5 : 0.0);
    }
  }
  e.pmse /= static_cast<double>(n_test);
  e.class_error /= static_cast<double>(n_test);
  return e;
}

// Constant-zero predictor, the reference for "no learning".
struct ZeroModel {
  Eigen::VectorXd predict(const Eigen::MatrixXd& x) const { return Eigen::VectorXd::Zero(x.rows()); }
};

struct OrderParams {
  Eigen::MatrixXd M;  // n_clusters x K
  Eigen::MatrixXd Q;  // K x K
  Eigen::VectorXd v;
  Eigen::MatrixXd T;
  double chi = 0.0;
};

inline OrderParams order_params_of(const TwoLayerNet& net, const MixtureSpec& spec) {
  OrderParams o;
  const double D = spec.dim;
  o.M = spec.means().transpose() * net.W.transpose() / D;
  o.Q = spec.covariance.sandwich(net.W) / D;
  for (Eigen::Index k = 0; k < o.Q.rows(); ++k)
    for (Eigen::Index l = k + 1; l < o.Q.cols(); ++l) o.Q(l, k) = o.Q(k, l);
  o.v = net.v;
  o.T = spec.T();
  o.chi = spec.chi();
  return o;
}

namespace detail {
// Evaluation seeds come from a stream separate from training, so changing the
// evaluation schedule does not change the training trajectory.
inline std::uint64_t eval_seed(std::uint64_t seed, long long step) {
  return hash_combine(hash_combine(seed, 0x6576616cULL), static_cast<std::uint64_t>(step));
}

inline bool is_eval_step(const TrainConfig& cfg, long long step) {
  if (step == 0 || step == cfg.steps) return true;
  if (std::find(cfg.eval_steps.begin(), cfg.eval_steps.end(), step) != cfg.eval_steps.end()) return true;
  return cfg.eval_every > 0 && step % cfg.eval_every == 0;
}

inline long long next_eval_step(const TrainConfig& cfg, long long step) {
  long long next = cfg.steps;
  if (cfg.eval_every > 0) next = std::min(next, (step / cfg.eval_every + 1) * cfg.eval_every);
  for (long long e : cfg.eval_steps)
    if (e > step) next = std::min(next, e);
  return next;
}
}  // namespace detail

using NetObserver = std::function<void(long long step, const TwoLayerNet&)>;

// Online SGD on the quadratic loss, one fresh sample per step:
//   w_k <- w_k - (eta/sqrt D) v_k Delta g'(lambda_k) x - (eta/D) kappa w_k
//   v_k <- v_k - (eta/D)(g(lambda_k) Delta + kappa v_k)
// with Delta = phi(x) - y, both computed from the pre-update weights. The
// first-layer decay is scaled by eta/D so that kappa is the same constant
// that multiplies the decay terms of the order-parameter equations.
inline std::vector<SimPoint> train_2lnn(TwoLayerNet& net, const MixtureSpec& spec, const TrainConfig& cfg,
                                        const NetObserver& observer = {}) {
  cfg.validate();
  if (net.dim() != spec.dim) throw domain_error("train_2lnn: network dimension does not match the mixture");
  const int K = net.K();
  const double D = spec.dim;
  const double sqrtD = std::sqrt(D);
  const double eta = cfg.lr, kappa = cfg.weight_decay;
  Rng rng(cfg.seed);
  std::vector<SimPoint> traj;
  Eigen::VectorXd lam(K), g(K), dg(K), coef(K);
  const double shrink_w = 1.0 - eta * kappa / D;
  const double shrink_v = 1.0 - eta * kappa / D;

  for (long long step = 0;; ++step) {
    if (detail::is_eval_step(cfg, step)) {
      ErrorEstimate e = measure_errors(net, spec, cfg.eval_set_size, detail::eval_seed(cfg.seed, step));
      traj.push_back({static_cast<double>(step) / D, step, e.pmse, e.class_error});
      if (observer) observer(step, net);
    }
    if (step == cfg.steps) break;
    Sample s = sample(spec, rng);
    lam.noalias() = net.W * s.x / sqrtD;
    for (int k = 0; k < K; ++k) {
      g[k] = act_value(net.activation, lam[k]);
      dg[k] = act_derivative(net.activation, lam[k]);
    }
    const double delta = net.v.dot(g) - s.y;
    if (!std::isfinite(delta))
      throw divergence_error("SGD diverged at step " + std::to_string(step) + " (non-finite output)");
    coef = (eta / sqrtD) * delta * net.v.cwiseProduct(dg);
    if (kappa != 0.0) net.W *= shrink_w;
    net.W.noalias() -= coef * s.x.transpose();
    if (kappa != 0.0) net.v *= shrink_v;
    net.v.noalias() -= (eta / D) * delta * g;
  }
  if (!net.W.allFinite() || !net.v.allFinite())
    throw divergence_error("SGD diverged: non-finite weights after " + std::to_string(cfg.steps) + " steps");
  return traj;
}

using RfObserver = std::function<void(long long step, const RfModel&)>;

// Online SGD for the random-feature readout,
//   w <- w + (eta/sqrt P)(z (y - phi) - kappa w).
// The features of a block of upcoming samples are computed with one matrix
// product (F is fixed), then the per-sample updates are applied in order, so
// the result is the same as one-sample-at-a-time SGD.
inline std::vector<SimPoint> train_rf(RfModel& model, const MixtureSpec& spec, const TrainConfig& cfg,
                                      const RfObserver& observer = {}) {
  cfg.validate();
  if (model.dim() != spec.dim) throw domain_error("train_rf: model dimension does not match the mixture");
  const double D = spec.dim;
  const double sqrtP = std::sqrt(static_cast<double>(model.P()));
  const double rate = cfg.lr / sqrtP;
  const double shrink = 1.0 - rate * cfg.weight_decay;
  Rng rng(cfg.seed);
  std::vector<SimPoint> traj;
  const long long block = 256;
  long long step = 0;
  auto evaluate = [&] {
    ErrorEstimate e = measure_errors(model, spec, cfg.eval_set_size, detail::eval_seed(cfg.seed, step));
    traj.push_back({static_cast<double>(step) / D, step, e.pmse, e.class_error});
    if (observer) observer(step, model);
  };
  const bool averaging = cfg.average_from >= 0;
  Eigen::VectorXd w_sum;
  long long n_avg = 0;
  if (averaging) w_sum = Eigen::VectorXd::Zero(model.P());
  evaluate();
  while (step < cfg.steps) {
    long long n = std::min(block, detail::next_eval_step(cfg, step) - step);
    if (averaging && step < cfg.average_from) n = std::min(n, cfg.average_from - step);
    SampleBatch b = sample_batch(spec, n, rng);
    Eigen::MatrixXd z = model.features(b.x);
    for (long long i = 0; i < n; ++i) {
      double phi = z.row(i).dot(model.w) / sqrtP;
      double err = b.y[i] - phi;
      if (!std::isfinite(err))
        throw divergence_error("RF SGD diverged at step " + std::to_string(step + i) + " (non-finite output)");
      if (cfg.weight_decay != 0.0) model.w *= shrink;
      model.w.noalias() += (rate * err) * z.row(i).transpose();
      if (averaging && step >= cfg.average_from) {
        w_sum += model.w;
        ++n_avg;
      }
    }
    step += n;
    if (averaging && step == cfg.steps) model.w = w_sum / static_cast<double>(n_avg);
    if (detail::is_eval_step(cfg, step)) evaluate();
  }
  return traj;
}

inline nlohmann::json rf_to_json(const RfModel& m) {
  nlohmann::json j;
  j["activation"] = to_string(m.activation);
  j["P"] = m.P();
  j["D"] = m.dim();
  j["w"] = std::vector<double>(m.w.data(), m.w.data() + m.w.size());
  return j;
}

}  // namespace gmix
