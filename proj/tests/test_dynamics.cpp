#include <cmath>

#include <gtest/gtest.h>

#include "gmix/dynamics.hpp"
#include "gmix/sgd.hpp"

using namespace gmix;

namespace {

bool bit_equal(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  for (Eigen::Index i = 0; i < a.size(); ++i)
    if (a.data()[i] != b.data()[i]) return false;
  return true;
}

void check_conserved_along(const MixtureSpec& spec, const OrderParameterState& s0, const OdeConfig& cfg, double t_max) {
  long long steps = 0;
  integrate(s0, spec, cfg, t_max, {}, [&](const OrderParameterState& s) {
    ++steps;
    ASSERT_TRUE(bit_equal(s.T, s0.T));
    ASSERT_EQ(s.chi, s0.chi);
    ASSERT_EQ(s.T_density.size(), s0.T_density.size());
    for (std::size_t b = 0; b < s.T_density.size(); ++b) ASSERT_TRUE(bit_equal(s.T_density[b], s0.T_density[b]));
    for (const auto& q : s.q) ASSERT_TRUE(bit_equal(q, q.transpose()));
    ASSERT_TRUE(bit_equal(s.Q(), s.Q().transpose()));
  });
  EXPECT_GT(steps, 10);
}

}  // namespace

TEST(Conservation, IsotropicXorTrajectory) {
  MixtureSpec spec = build_xor_mixture(200, std::sqrt(200.0), 0.1);
  OdeConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.01;
  cfg.mc_samples = 2000;
  cfg.seed = 3;
  check_conserved_along(spec, init_state(spec, 4, 1.0, 7), cfg, 5.0);
}

TEST(Conservation, BinnedSpectrumTrajectory) {
  Rng rng(5);
  MixtureSpec spec = build_random_mixture(60, 4, rng);
  OdeConfig cfg;
  cfg.lr = 0.2;
  cfg.activation = Activation::scaled_erf;
  cfg.mc_samples = 2000;
  cfg.seed = 1;
  OrderParameterState s0 = init_state(spec, 3, 1.0, 2, Activation::scaled_erf, 12);
  EXPECT_EQ(s0.n_bins(), 12);
  check_conserved_along(spec, s0, cfg, 3.0);
}

TEST(OrderParameters, StateMatchesDirectOverlaps) {
  Rng rng(9);
  MixtureSpec spec = build_random_mixture(40, 3, rng);
  TwoLayerNet net = TwoLayerNet::random(3, 40, 1.0, Activation::relu, rng);
  OrderParameterState s = state_from_weights(spec, net.W, net.v, 40);
  OrderParams o = order_params_of(net, spec);
  EXPECT_NEAR((s.M() - o.M).cwiseAbs().maxCoeff(), 0.0, 1e-10);
  EXPECT_NEAR((s.Q() - o.Q).cwiseAbs().maxCoeff(), 0.0, 1e-10);
  Eigen::MatrixXd T = Eigen::MatrixXd::Zero(3, 3);
  for (int b = 0; b < s.n_bins(); ++b) T += s.spectrum.mass[b] * s.T_density[static_cast<std::size_t>(b)];
  EXPECT_NEAR((T - s.T).cwiseAbs().maxCoeff(), 0.0, 1e-10);
  EXPECT_NO_THROW(s.spectrum.validate());
}

TEST(Readout, MatchesSampledNetworkErrors) {
  const int D = 300;
  MixtureSpec spec = build_xor_mixture(D, std::sqrt(double(D)), 0.2);
  Rng rng(4);
  TwoLayerNet net = TwoLayerNet::random(4, D, 1.0, Activation::relu, rng);
  OdeConfig cfg;
  cfg.mc_samples = 200000;
  Readout r = readout_from_state(state_from_weights(spec, net.W, net.v), spec, cfg);
  ErrorEstimate e = measure_errors(net, spec, 200000, 17);
  EXPECT_NEAR(r.pmse, e.pmse, 0.03 * std::max(1.0, e.pmse));
  EXPECT_NEAR(r.class_error, e.class_error, 0.01);
}

TEST(VectorField, ZeroLearningRateIsStationary) {
  MixtureSpec spec = build_xor_mixture(100, 10.0, 0.1);
  OrderParameterState s = init_state(spec, 4, 0.5, 1);
  OdeConfig cfg;
  cfg.lr = 0.0;
  cfg.mc_samples = 1000;
  Rng rng(0);
  OrderParameterState n = eom_step(s, spec, cfg, rng);
  EXPECT_TRUE(bit_equal(n.M(), s.M()));
  EXPECT_TRUE(bit_equal(n.Q(), s.Q()));
  EXPECT_TRUE(bit_equal(n.v, s.v));
}

TEST(Integration, DeterministicForFixedSeed) {
  MixtureSpec spec = build_xor_mixture(100, 10.0, 0.1);
  OrderParameterState s = init_state(spec, 4, 1.0, 1);
  OdeConfig cfg;
  cfg.lr = 0.1;
  cfg.mc_samples = 1000;
  cfg.seed = 12;
  ObserverSchedule obs{{0.0, 1.0, 2.0}, false};
  OdeTrajectory a = integrate(s, spec, cfg, 2.0, obs), b = integrate(s, spec, cfg, 2.0, obs);
  ASSERT_EQ(a.points.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(a.points[i].pmse, b.points[i].pmse);
    EXPECT_EQ(a.points[i].t, b.points[i].t);
  }
  EXPECT_TRUE(bit_equal(a.final_state.M(), b.final_state.M()));
}

TEST(Integration, StepHalvingConverges) {
  MixtureSpec spec = build_xor_mixture(100, 10.0, 0.2);
  OrderParameterState s = init_state(spec, 2, 1.0, 3, Activation::scaled_erf);
  std::vector<double> pm;
  for (double dt : {0.2, 0.1, 0.05}) {
    OdeConfig cfg;
    cfg.lr = 0.5;
    cfg.dt = dt;
    cfg.activation = Activation::scaled_erf;
    cfg.mc_samples = 100000;
    cfg.seed = 5;
    OdeTrajectory tr = integrate(s, spec, cfg, 4.0, {{4.0}, false});
    ASSERT_EQ(tr.points.size(), 1u);
    pm.push_back(tr.points[0].pmse);
  }
  EXPECT_LT(std::abs(pm[1] - pm[2]), 0.02);
  EXPECT_LT(std::abs(pm[1] - pm[2]), std::abs(pm[0] - pm[2]) + 2e-3);
}

TEST(Integration, LearnsXorWithRelu) {
  MixtureSpec spec = build_xor_mixture(400, 20.0, 0.1);
  OdeConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.01;
  cfg.mc_samples = 4000;
  cfg.seed = 2;
  OrderParameterState s = init_state(spec, 8, 1.0, 4);
  OdeTrajectory tr = integrate(s, spec, cfg, 60.0, {{0.0, 60.0}, false});
  ASSERT_EQ(tr.points.size(), 2u);
  EXPECT_LT(tr.points[1].pmse, tr.points[0].pmse);
  EXPECT_LT(tr.points[1].class_error, 0.2);
}

TEST(Integration, RejectsInvalidConfig) {
  MixtureSpec spec = build_xor_mixture(50, 7.0, 0.1);
  OdeConfig cfg;
  cfg.dt = 0.0;
  EXPECT_THROW(integrate(init_state(spec, 2, 1.0, 0), spec, cfg, 1.0), domain_error);
}
