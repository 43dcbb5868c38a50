#include <cmath>

#include <gtest/gtest.h>

#include "gmix/moments.hpp"
#include "oracles.hpp"

using namespace gmix;

namespace {

LocalFieldGaussian pair_gaussian() {
  LocalFieldGaussian g;
  g.mean = Eigen::Vector2d(0.3, -0.4);
  g.cov.resize(2, 2);
  g.cov << 1.2, 0.5, 0.5, 0.8;
  return g;
}

double oracle_pair(Activation act, IntegralId::Kind kind, const LocalFieldGaussian& g) {
  auto f = [&](double x1, double x2) {
    double lam[2] = {x1, x2};
    IntegralId id;
    id.kind = kind;
    id.idx = {0, 1, 1, 0};
    if (kind == IntegralId::Kind::I22) id.idx = {0, 1, 0, 0};
    return id.evaluate(act, lam);
  };
  return oracle::bivariate_expectation(g.mean, g.cov, f);
}

}  // namespace

TEST(PsdFactor, ReconstructsAndRejects) {
  Eigen::Matrix3d c;
  c << 2.0, 0.3, 0.1, 0.3, 1.0, -0.2, 0.1, -0.2, 0.5;
  Eigen::MatrixXd L = psd_factor(c);
  EXPECT_NEAR((L * L.transpose() - c).norm(), 0.0, 1e-12);
  Eigen::Matrix2d rank1;
  rank1 << 1.0, 1.0, 1.0, 1.0;
  Eigen::MatrixXd L1 = psd_factor(rank1);
  EXPECT_NEAR((L1 * L1.transpose() - rank1).norm(), 0.0, 1e-12);
  Eigen::Matrix2d bad;
  bad << 1.0, 2.0, 2.0, 1.0;
  EXPECT_THROW(psd_factor(bad), numerical_error);
}

TEST(McIntegral, AgreesWithQuadratureWithinStandardErrors) {
  LocalFieldGaussian g = pair_gaussian();
  using K = IntegralId::Kind;
  for (Activation act : {Activation::relu, Activation::scaled_erf}) {
    for (K kind : {K::I22, K::I42, K::I32}) {
      IntegralId id;
      id.kind = kind;
      id.idx = kind == K::I22 ? std::array<int, 4>{0, 1, 0, 0} : std::array<int, 4>{0, 1, 1, 0};
      Rng rng(21);
      McEstimate e = mc_integral_with_error(id, g, act, 400000, rng);
      double ref = oracle_pair(act, kind, g);
      EXPECT_GT(e.std_error, 0.0);
      EXPECT_LT(std::abs(e.value - ref), 5.0 * e.std_error + 1e-9)
          << to_string(act) << " kind " << static_cast<int>(kind) << " mc " << e.value << " ref " << ref;
    }
  }
}

TEST(McIntegral, ThreeFieldIntegralMatchesSmoothQuadrature) {
  LocalFieldGaussian g;
  g.mean = Eigen::Vector3d(0.2, -0.1, 0.5);
  g.cov.resize(3, 3);
  g.cov << 1.0, 0.3, -0.2, 0.3, 0.9, 0.1, -0.2, 0.1, 1.1;
  IntegralId id = IntegralId::I3(0, 1, 2);
  double ref = oracle::smooth_expectation(g.mean, g.cov, [&](const Eigen::VectorXd& x) {
    return id.evaluate(Activation::scaled_erf, x.data());
  });
  Rng rng(8);
  McEstimate e = mc_integral_with_error(id, g, Activation::scaled_erf, 400000, rng);
  EXPECT_LT(std::abs(e.value - ref), 5.0 * e.std_error);
}

TEST(McIntegral, RejectsMalformedRequests) {
  LocalFieldGaussian g = pair_gaussian();
  Rng rng(1);
  EXPECT_THROW(mc_integral(IntegralId::I42(0, 2), g, Activation::relu, 10, rng), domain_error);
  EXPECT_THROW(mc_integral(IntegralId::I31(0), g, Activation::relu, 0, rng), domain_error);
  g.cov(0, 1) = 0.6;
  EXPECT_THROW(mc_integral(IntegralId::I31(0), g, Activation::relu, 10, rng), domain_error);
}

TEST(McIntegral, SameSeedIsBitIdentical) {
  LocalFieldGaussian g = pair_gaussian();
  Rng a(4), b(4);
  EXPECT_EQ(mc_integral(IntegralId::I42(0, 1), g, Activation::relu, 1001, a),
            mc_integral(IntegralId::I42(0, 1), g, Activation::relu, 1001, b));
}

TEST(RadialExpectations, MatchMonteCarloForRelu) {
  Eigen::Vector3d mean(0.4, -0.3, 0.1);
  Eigen::MatrixXd basis(3, 2);
  basis << 0.5, 0.1, -0.2, 0.6, 0.3, 0.3;
  Eigen::Vector3d v(0.7, -0.4, 0.9);
  FieldExpectations rad = radial_field_expectations(mean, basis, v, 1.0, 4096, 0.5);
  Rng rng(2);
  Eigen::MatrixXd z = rng.normal_matrix(400000, 2);
  FieldExpectations mc = mc_field_expectations(mean, basis, z, Activation::relu, v, 1.0);
  EXPECT_NEAR((rad.g - mc.g).cwiseAbs().maxCoeff(), 0.0, 3e-3);
  EXPECT_NEAR((rad.gg - mc.gg).cwiseAbs().maxCoeff(), 0.0, 3e-3);
  EXPECT_NEAR((rad.dg - mc.dg).cwiseAbs().maxCoeff(), 0.0, 3e-3);
  EXPECT_NEAR((rad.dg_g - mc.dg_g).cwiseAbs().maxCoeff(), 0.0, 3e-3);
  EXPECT_NEAR((rad.noise - mc.noise).cwiseAbs().maxCoeff(), 0.0, 5e-3);
  EXPECT_NEAR(rad.sq_error, mc.sq_error, 5e-3);
  EXPECT_NEAR(rad.class_error, mc.class_error, 3e-3);
}

TEST(RadialExpectations, OneDimensionalMeanMatchesClosedForm) {
  // E relu(m + s z) = m Phi(m/s) + s phi(m/s).
  Eigen::VectorXd mean = Eigen::VectorXd::Constant(1, 0.3);
  Eigen::MatrixXd basis = Eigen::MatrixXd::Constant(1, 1, 0.8);
  FieldExpectations e = radial_field_expectations(mean, basis, Eigen::VectorXd::Ones(1), 1.0, 256, 0.5);
  double r = 0.3 / 0.8;
  double exact = 0.3 * 0.5 * std::erfc(-r / std::sqrt(2.0)) + 0.8 * oracle::phi(r);
  EXPECT_NEAR(e.g[0], exact, 1e-10);
}

TEST(WeakCorrelation, TwoPointResidualIsSecondOrder) {
  auto relu = [](double x) { return std::max(0.0, x); };
  auto erfs = [](double x) { return std::erf(x / std::sqrt(2.0)); };
  const double m1 = 0.3, m2 = -0.2, v1 = 1.0, v2 = 0.7, M12 = 0.6;
  auto marginal = [&](const std::function<double(double)>& f, double m, double var, double brk) {
    MarginalStats s;
    double sd = std::sqrt(var);
    s.mean = oracle::normal_expectation([&](double z) { return f(m + sd * z); }, {brk});
    s.dev = oracle::normal_expectation([&](double z) { return sd * z * f(m + sd * z); }, {brk});
    s.variance = var;
    return s;
  };
  MarginalStats f = marginal(relu, m1, v1, -m1 / std::sqrt(v1));
  MarginalStats g = marginal(erfs, m2, v2, 0.0);
  std::vector<double> residual;
  for (double eps : {0.2, 0.1, 0.05}) {
    Eigen::Matrix2d C;
    C << v1, eps * M12, eps * M12, v2;
    double exact = oracle::bivariate_expectation(Eigen::Vector2d(m1, m2), C,
                                                 [&](double x, double y) { return relu(x) * erfs(y); }, 3000);
    residual.push_back(std::abs(exact - weak_corr_2pt(f, g, eps * M12)));
  }
  EXPECT_GE(residual[0] / residual[1], 3.5);
  EXPECT_GE(residual[1] / residual[2], 3.5);
}

TEST(WeakCorrelation, ThreePointReducesToProductAtZeroCoupling) {
  PairStats fg{0.4, 0.1, -0.2, 1.0, 0.8, 0.3};
  MarginalStats h{0.25, 0.6, 1.1};
  EXPECT_DOUBLE_EQ(weak_corr_3pt(fg, h, 0.0, 0.0), 0.4 * 0.25);
  EXPECT_THROW(weak_corr_2pt(MarginalStats{0, 0, 0}, h, 0.1), domain_error);
}
