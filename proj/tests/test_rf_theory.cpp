#include <cmath>

#include <gtest/gtest.h>

#include "gmix/rf_theory.hpp"
#include "gmix/sgd.hpp"
#include "oracles.hpp"

using namespace gmix;

namespace {

struct Sampled {
  Eigen::MatrixXd mean;  // P x n_clusters
  std::vector<Eigen::MatrixXd> cov;
  std::vector<Eigen::MatrixXd> se;
  Eigen::MatrixXd mean_se;
};

// Per-cluster feature mean and covariance from n samples, with standard
// errors of each entry.
Sampled sample_features(const MixtureSpec& spec, const RfModel& m, long long n, Rng& rng) {
  Sampled s;
  const int P = m.P();
  s.mean.resize(P, spec.n_clusters());
  s.mean_se.resize(P, spec.n_clusters());
  const double scale = 1.0 / std::sqrt(double(spec.dim));
  for (int a = 0; a < spec.n_clusters(); ++a) {
    Eigen::MatrixXd x = std::sqrt(spec.covariance.sigma2()) * rng.normal_matrix(n, spec.dim);
    x.rowwise() += scale * spec.clusters[a].mean_scaled.transpose();
    Eigen::MatrixXd z = m.features(x);
    Eigen::VectorXd mu = z.colwise().mean();
    Eigen::MatrixXd c = z.rowwise() - mu.transpose();
    Eigen::MatrixXd cov = c.transpose() * c / double(n);
    Eigen::MatrixXd c2 = c.array().square().matrix();
    Eigen::MatrixXd m4 = c2.transpose() * c2 / double(n);
    s.mean.col(a) = mu;
    s.mean_se.col(a) = (cov.diagonal() / double(n)).cwiseSqrt();
    s.cov.push_back(cov);
    s.se.push_back(((m4.array() - cov.array().square()).cwiseMax(0.0) / double(n)).sqrt().matrix());
  }
  return s;
}

}  // namespace

TEST(AbcConstants, ReluClosedFormMatchesQuadrature) {
  for (double sigma : {0.3, 1.0, 2.5}) {
    AbcConstants k = abc_constants(Activation::relu, sigma);
    auto relu = [&](double z) { return std::max(0.0, sigma * z); };
    EXPECT_NEAR(k.a, oracle::normal_expectation(relu, {0.0}), 1e-6);
    EXPECT_NEAR(k.b, oracle::normal_expectation([&](double z) { return z * relu(z); }, {0.0}), 1e-6);
    EXPECT_NEAR(k.c2, oracle::normal_expectation([&](double z) { return relu(z) * relu(z); }, {0.0}), 1e-6);
    EXPECT_NEAR(k.d2, oracle::normal_expectation([&](double z) { return z * relu(z) * relu(z); }, {0.0}), 1e-6);
  }
  AbcConstants one = abc_constants(Activation::relu, 1.0);
  EXPECT_NEAR(one.a, 1.0 / std::sqrt(2.0 * std::numbers::pi), 1e-15);
  EXPECT_DOUBLE_EQ(one.b, 0.5);
  EXPECT_DOUBLE_EQ(one.c2, 0.5);
}

TEST(AbcConstants, ErfHermiteRuleMatchesQuadrature) {
  for (double sigma : {0.5, 1.5}) {
    AbcConstants k = abc_constants(Activation::scaled_erf, sigma);
    auto g = [&](double z) { return act_value(Activation::scaled_erf, sigma * z); };
    EXPECT_NEAR(k.a, oracle::normal_expectation(g), 1e-9);
    EXPECT_NEAR(k.b, oracle::normal_expectation([&](double z) { return z * g(z); }), 1e-9);
    EXPECT_NEAR(k.c2, oracle::normal_expectation([&](double z) { return g(z) * g(z); }), 1e-9);
  }
  EXPECT_THROW(abc_constants(Activation::relu, -1.0), domain_error);
}

TEST(ReluMoments, AgreeWithSampledFeatures) {
  const int D = 20, P = 30;
  MixtureSpec spec = build_xor_mixture(D, 1.5 * std::sqrt(double(D)), 0.3);
  Rng rng(12);
  RfModel m = RfModel::random(P, D, rng);
  FeatureMoments fm = relu_moments(spec, m.F);
  Sampled s = sample_features(spec, m, 200000, rng);
  for (int a = 0; a < spec.n_clusters(); ++a) {
    Eigen::VectorXd zm = (fm.per_cluster[a].mean - s.mean.col(a)).cwiseQuotient(s.mean_se.col(a));
    EXPECT_LT(zm.cwiseAbs().maxCoeff(), 4.5) << "cluster " << a;
    Eigen::MatrixXd zc = (fm.cov(a) - s.cov[a]).cwiseQuotient(s.se[a]);
    EXPECT_LT(zc.cwiseAbs().maxCoeff(), 5.0) << "cluster " << a;
  }
}

TEST(ReluMoments, StructuredProductMatchesDenseCovariance) {
  const int D = 30, P = 40;
  MixtureSpec spec = build_xor_mixture(D, std::sqrt(double(D)), 0.2);
  Rng rng(4);
  Eigen::MatrixXd F = rng.normal_matrix(P, D);
  Eigen::VectorXd x = rng.normal_vector(P);
  for (OffDiagonal mode : {OffDiagonal::first_order, OffDiagonal::mean_field, OffDiagonal::exact}) {
    ReluMomentOptions o;
    o.offdiagonal = mode;
    FeatureMoments fm = relu_moments(spec, F, o);
    for (int a = 0; a < 4; ++a) EXPECT_NEAR((fm.apply_cov(a, x) - fm.cov(a) * x).norm(), 0.0, 1e-10 * x.norm() * P);
  }
}

TEST(LowSnrMoments, ResidualIsSecondOrderInTheShift) {
  // Halving the mean norm should shrink the gap to the exact moments about
  // fourfold: the expansion is exact to first order in F mu / D. Rows of F are
  // normalised so that every pre-activation has the variance the expansion
  // assumes.
  const int D = 400, P = 60;
  Rng rng(2);
  Eigen::MatrixXd F = rng.normal_matrix(P, D);
  for (int i = 0; i < P; ++i) F.row(i) *= std::sqrt(double(D)) / F.row(i).norm();
  LowSnrOptions with_d2;
  with_d2.include_d2 = true;
  std::vector<double> mean_gap, var_gap;
  for (double r : {0.4, 0.2, 0.1}) {
    MixtureSpec spec = build_xor_mixture(D, r * std::sqrt(double(D)), 1.0);
    FeatureMoments ex = relu_moments(spec, F);
    FeatureMoments lo = low_snr_moments(spec, F, Activation::relu, with_d2);
    double gm = 0.0, gv = 0.0;
    for (int a = 0; a < 4; ++a) {
      gm = std::max(gm, (ex.per_cluster[a].mean - lo.per_cluster[a].mean).cwiseAbs().maxCoeff());
      gv = std::max(gv, (ex.per_cluster[a].var - lo.per_cluster[a].var).cwiseAbs().maxCoeff());
    }
    mean_gap.push_back(gm);
    var_gap.push_back(gv);
  }
  for (int i = 0; i < 2; ++i) {
    EXPECT_GE(mean_gap[i] / mean_gap[i + 1], 3.0) << i;
    EXPECT_GE(var_gap[i] / var_gap[i + 1], 3.0) << i;
  }
}

TEST(Asymptotics, DenseAndIterativeSolversAgree) {
  const int D = 60, P = 120;
  MixtureSpec spec = build_xor_mixture(D, std::sqrt(double(D)), 0.1);
  Rng rng(3);
  FeatureMoments fm = relu_moments(spec, rng.normal_matrix(P, D));
  for (Centering c : {Centering::mixture_mean, Centering::none}) {
    AsymptoticOptions dense, cg;
    dense.centering = cg.centering = c;
    cg.dense_limit = 10;
    RfAsymptotics a = rf_asymptotics(fm, spec, dense), b = rf_asymptotics(fm, spec, cg);
    EXPECT_EQ(a.rank, P);
    EXPECT_NEAR(a.pmse_inf, b.pmse_inf, 1e-8);
    EXPECT_NEAR(a.class_error_inf, b.class_error_inf, 1e-6);
    EXPECT_LT((a.w_hat - b.w_hat).norm() / a.w_hat.norm(), 1e-5);
  }
}

TEST(Asymptotics, MatchEmpiricalLeastSquares) {
  const int D = 20, P = 40;
  MixtureSpec spec = build_xor_mixture(D, std::sqrt(double(D)), 0.2);
  Rng rng(5);
  RfModel m = RfModel::random(P, D, rng);
  AsymptoticOptions ao;
  ao.centering = Centering::none;
  RfAsymptotics as = rf_asymptotics(relu_moments(spec, m.F), spec, ao);
  ASSERT_GT(as.pmse_inf, 0.0);
  ASSERT_LT(as.pmse_inf, 0.5);

  const long long n = 400000;
  SampleBatch b = sample_batch(spec, n, rng);
  Eigen::MatrixXd z = m.features(b.x) / std::sqrt(double(P));
  Eigen::VectorXd w = (z.transpose() * z).ldlt().solve(z.transpose() * b.y.cast<double>());
  EXPECT_LT((w - as.w_hat).norm() / as.w_hat.norm(), 0.05);

  m.w = as.w_hat;
  ErrorEstimate e = measure_errors(m, spec, 200000, 9);
  EXPECT_NEAR(0.5 * e.pmse, as.pmse_inf, 0.01);
  EXPECT_NEAR(e.class_error, as.class_error_inf, 0.02);
}

TEST(Asymptotics, ErrorsStayInRange) {
  Rng rng(7);
  for (double snr : {0.2, 1.0, 5.0}) {
    const int D = 50;
    MixtureSpec spec = build_xor_mixture(D, std::sqrt(double(D)), 1.0 / (snr * snr));
    RfAsymptotics as = rf_asymptotics(relu_moments(spec, rng.normal_matrix(100, D)), spec);
    EXPECT_GE(as.pmse_inf, 0.0);
    EXPECT_LE(as.pmse_inf, 0.5);
    EXPECT_GE(as.class_error_inf, 0.0);
    EXPECT_LE(as.class_error_inf, 0.5 + 1e-12);
  }
}

TEST(Kernel, ReluKernelClosedForm) {
  Eigen::Vector3d x(1.0, 2.0, -0.5);
  EXPECT_NEAR(relu_kernel(x, x), x.squaredNorm() / (2.0 * 3.0), 1e-14);
  EXPECT_NEAR(relu_kernel(x, -x), 0.0, 1e-14);
  Eigen::Vector3d y(0.3, -1.0, 2.0);
  // E relu(u) relu(v) for (u, v) Gaussian with the matching covariance.
  Eigen::Matrix2d C;
  C << x.squaredNorm() / 3.0, x.dot(y) / 3.0, x.dot(y) / 3.0, y.squaredNorm() / 3.0;
  double ref = oracle::bivariate_expectation(Eigen::Vector2d::Zero(), C,
                                             [](double u, double v) { return std::max(0.0, u) * std::max(0.0, v); });
  EXPECT_NEAR(relu_kernel(x, y), ref, 1e-8);
  EXPECT_THROW(relu_kernel(x, Eigen::Vector3d::Zero()), domain_error);
}

TEST(Kernel, AbcEstimateRecoversReluConstants) {
  const int D = 400;
  const double sigma = 0.7;
  Eigen::VectorXd mu = Eigen::VectorXd::Zero(D);
  mu[0] = std::sqrt(double(D));
  Rng rng(1);
  KernelAbcEstimate e = kernel_abc(relu_kernel, sigma, mu, D, 400, rng);
  AbcConstants k = abc_constants(Activation::relu, sigma);
  EXPECT_NEAR(e.a2, k.a * k.a, 5.0 * e.a2_se + 0.01 * k.a * k.a);
  EXPECT_NEAR(e.c2, k.c2, 5.0 * e.c2_se + 0.01 * k.c2);
  EXPECT_NEAR(e.b2, k.b * k.b, 5.0 * e.b2_se + 0.05 * k.b * k.b);
}
