#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"
#include "rng.hpp"

namespace gmix {

// mean_scaled stores mu (not mu/sqrt D); the sampler divides by sqrt D.
struct Cluster {
  Eigen::VectorXd mean_scaled;
  int label = 1;
  double weight = 0.0;
};

// Shared covariance Omega of all clusters.
class CovarianceSpec {
public:
  enum class Kind { isotropic, dense, spectral };

  static CovarianceSpec isotropic(double sigma2) {
    CovarianceSpec c;
    c.kind_ = Kind::isotropic;
    c.sigma2_ = sigma2;
    return c;
  }

  static CovarianceSpec dense(Eigen::MatrixXd matrix) {
    CovarianceSpec c;
    c.kind_ = Kind::dense;
    c.matrix_ = std::make_shared<const Eigen::MatrixXd>(std::move(matrix));
    return c;
  }

  // Columns of eigenvectors are the eigenvectors.
  static CovarianceSpec spectral(Eigen::VectorXd eigenvalues, Eigen::MatrixXd eigenvectors) {
    CovarianceSpec c;
    c.kind_ = Kind::spectral;
    c.cache_->values = std::move(eigenvalues);
    c.cache_->vectors = std::move(eigenvectors);
    std::call_once(c.cache_->flag, [] {});
    return c;
  }

  Kind kind() const { return kind_; }
  bool is_isotropic() const { return kind_ == Kind::isotropic; }

  double sigma2() const {
    if (kind_ != Kind::isotropic) throw domain_error("sigma2() requested from a non-isotropic covariance");
    return sigma2_;
  }

  const Eigen::MatrixXd& matrix() const {
    if (kind_ != Kind::dense) throw domain_error("matrix() requested from a non-dense covariance");
    return *matrix_;
  }

  void validate(int dim) const {
    switch (kind_) {
      case Kind::isotropic:
        if (!(sigma2_ >= 0.0) || !std::isfinite(sigma2_))
          throw validation_error("covariance: isotropic sigma2 must be finite and >= 0, got " + std::to_string(sigma2_));
        break;
      case Kind::dense: {
        const auto& m = *matrix_;
        if (m.rows() != dim || m.cols() != dim)
          throw validation_error("covariance: dense matrix must be " + std::to_string(dim) + "x" + std::to_string(dim));
        if (!m.allFinite()) throw validation_error("covariance: dense matrix has non-finite entries");
        double asym = (m - m.transpose()).cwiseAbs().maxCoeff();
        if (asym > 1e-10)
          throw validation_error("covariance: dense matrix not symmetric (max |A - A^T| = " + std::to_string(asym) + ")");
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
        double lo = es.eigenvalues().minCoeff(), hi = es.eigenvalues().maxCoeff();
        if (lo < -1e-8 * std::max(hi, 0.0) || (hi <= 0.0 && lo < 0.0))
          throw validation_error("covariance: not positive semidefinite (min eigenvalue " + std::to_string(lo) + ")");
        break;
      }
      case Kind::spectral: {
        const auto& val = cache_->values;
        const auto& vec = cache_->vectors;
        if (val.size() != dim || vec.rows() != dim || vec.cols() != dim)
          throw validation_error("covariance: spectral form must have " + std::to_string(dim) + " eigenpairs");
        if (!val.allFinite() || val.minCoeff() < 0.0)
          throw validation_error("covariance: spectral eigenvalues must be nonnegative");
        double orth = (vec.transpose() * vec - Eigen::MatrixXd::Identity(dim, dim)).cwiseAbs().maxCoeff();
        if (orth > 1e-8) throw validation_error("covariance: spectral eigenvectors are not orthonormal");
        break;
      }
    }
  }

  // Eigenvalues in ascending order, length dim.
  Eigen::VectorXd eigenvalues(int dim) const {
    if (kind_ == Kind::isotropic) return Eigen::VectorXd::Constant(dim, sigma2_);
    return decomposition().values;
  }

  // Orthonormal eigenvectors as columns, ordered like eigenvalues(). Not
  // available (and not needed) for the isotropic case.
  const Eigen::MatrixXd& eigenvectors() const {
    if (kind_ == Kind::isotropic) throw domain_error("eigenvectors() requested from an isotropic covariance");
    return decomposition().vectors;
  }

  // Rows of z are independent standard normals; returns rows of Omega^{1/2} z.
  Eigen::MatrixXd apply_sqrt(const Eigen::MatrixXd& z) const {
    if (kind_ == Kind::isotropic) return std::sqrt(sigma2_) * z;
    return z * decomposition().sqrt;  // sqrt is symmetric
  }

  // W Omega W^T for a K x D matrix W.
  Eigen::MatrixXd sandwich(const Eigen::MatrixXd& w) const {
    if (kind_ == Kind::isotropic) return sigma2_ * (w * w.transpose());
    if (kind_ == Kind::dense) return w * (*matrix_) * w.transpose();
    const auto& d = decomposition();
    Eigen::MatrixXd wg = w * d.vectors;
    return wg * d.values.asDiagonal() * wg.transpose();
  }

  Eigen::MatrixXd dense_matrix(int dim) const {
    if (kind_ == Kind::isotropic) return sigma2_ * Eigen::MatrixXd::Identity(dim, dim);
    if (kind_ == Kind::dense) return *matrix_;
    const auto& d = decomposition();
    return d.vectors * d.values.asDiagonal() * d.vectors.transpose();
  }

private:
  struct Cache {
    std::once_flag flag;
    Eigen::VectorXd values;
    Eigen::MatrixXd vectors;
    Eigen::MatrixXd sqrt;
    std::once_flag sqrt_flag;
  };

  const Cache& decomposition() const {
    std::call_once(cache_->flag, [this] {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(*matrix_);
      cache_->values = es.eigenvalues();
      cache_->vectors = es.eigenvectors();
    });
    std::call_once(cache_->sqrt_flag, [this] {
      Eigen::VectorXd r = cache_->values.cwiseMax(0.0).cwiseSqrt();
      cache_->sqrt = cache_->vectors * r.asDiagonal() * cache_->vectors.transpose();
    });
    return *cache_;
  }

  Kind kind_ = Kind::isotropic;
  double sigma2_ = 0.0;
  std::shared_ptr<const Eigen::MatrixXd> matrix_;
  std::shared_ptr<Cache> cache_ = std::make_shared<Cache>();
};

struct MixtureSpec {
  int dim = 0;
  std::vector<Cluster> clusters;
  CovarianceSpec covariance;

  int n_clusters() const { return static_cast<int>(clusters.size()); }

  void validate() const {
    if (dim < 1) throw validation_error("mixture: dim must be positive");
    if (clusters.empty()) throw validation_error("mixture: no clusters");
    double total = 0.0;
    bool has_pos = false, has_neg = false;
    for (std::size_t a = 0; a < clusters.size(); ++a) {
      const auto& c = clusters[a];
      std::string where = "mixture: cluster " + std::to_string(a);
      if (c.mean_scaled.size() != dim) throw validation_error(where + " mean has wrong length");
      if (!c.mean_scaled.allFinite()) throw validation_error(where + " mean has non-finite entries");
      if (c.label != 1 && c.label != -1) throw validation_error(where + " label must be +1 or -1");
      if (!(c.weight > 0.0) || c.weight > 1.0) throw validation_error(where + " weight must lie in (0, 1]");
      total += c.weight;
      (c.label > 0 ? has_pos : has_neg) = true;
    }
    if (std::abs(total - 1.0) > 1e-12)
      throw validation_error("mixture: cluster weights sum to " + std::to_string(total) +
                             ", expected 1 (normalization)");
    if (!has_pos || !has_neg) throw validation_error("mixture: need at least one cluster per label");
    covariance.validate(dim);
  }

  // D x n_clusters, column alpha is mu^alpha (unscaled).
  Eigen::MatrixXd means() const {
    Eigen::MatrixXd m(dim, n_clusters());
    for (int a = 0; a < n_clusters(); ++a) m.col(a) = clusters[a].mean_scaled;
    return m;
  }

  Eigen::VectorXd weights() const {
    Eigen::VectorXd w(n_clusters());
    for (int a = 0; a < n_clusters(); ++a) w[a] = clusters[a].weight;
    return w;
  }

  Eigen::VectorXd labels() const {
    Eigen::VectorXd y(n_clusters());
    for (int a = 0; a < n_clusters(); ++a) y[a] = clusters[a].label;
    return y;
  }

  // T^{ab} = mu^a . mu^b / D
  Eigen::MatrixXd T() const {
    Eigen::MatrixXd m = means();
    return m.transpose() * m / static_cast<double>(dim);
  }

  // chi = (1/D) sum_tau rho_tau^2
  double chi() const {
    if (covariance.is_isotropic()) return covariance.sigma2() * covariance.sigma2();
    return covariance.eigenvalues(dim).squaredNorm() / dim;
  }
};

struct Sample {
  Eigen::VectorXd x;
  int y = 0;
  int cluster_index = 0;
};

// Rows of x are samples.
struct SampleBatch {
  Eigen::MatrixXd x;
  Eigen::VectorXd y;
  std::vector<int> cluster_index;
};

namespace detail {
inline int pick_cluster(const MixtureSpec& spec, double u) {
  double acc = 0.0;
  for (int a = 0; a < spec.n_clusters(); ++a) {
    acc += spec.clusters[a].weight;
    if (u < acc) return a;
  }
  return spec.n_clusters() - 1;
}
}  // namespace detail

inline Sample sample(const MixtureSpec& spec, Rng& rng) {
  Sample s;
  s.cluster_index = detail::pick_cluster(spec, rng.uniform());
  const auto& c = spec.clusters[s.cluster_index];
  s.y = c.label;
  Eigen::RowVectorXd z(spec.dim);
  rng.fill_normal(z);
  s.x = (c.mean_scaled / std::sqrt(static_cast<double>(spec.dim))) +
        spec.covariance.apply_sqrt(z).transpose();
  return s;
}

inline SampleBatch sample_batch(const MixtureSpec& spec, Eigen::Index n, Rng& rng) {
  SampleBatch b;
  b.y.resize(n);
  b.cluster_index.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    int a = detail::pick_cluster(spec, rng.uniform());
    b.cluster_index[static_cast<std::size_t>(i)] = a;
    b.y[i] = spec.clusters[a].label;
  }
  Eigen::MatrixXd z(n, spec.dim);
  for (Eigen::Index i = 0; i < n; ++i)
    for (int r = 0; r < spec.dim; ++r) z(i, r) = rng.normal();
  b.x = spec.covariance.apply_sqrt(z);
  double inv = 1.0 / std::sqrt(static_cast<double>(spec.dim));
  for (Eigen::Index i = 0; i < n; ++i)
    b.x.row(i) += inv * spec.clusters[b.cluster_index[static_cast<std::size_t>(i)]].mean_scaled.transpose();
  return b;
}

// Means +mu1 e1 and -mu1 e1 carry label +1, +mu2 e2 and -mu2 e2 carry label -1.
// Cluster order is (+0, +1, -0, -1).
inline MixtureSpec build_xor_axes_mixture(int dim, double mu1, double mu2, double sigma2) {
  if (dim < 2) throw domain_error("build_xor_mixture: invalid dimension " + std::to_string(dim) + " (need dim >= 2)");
  if (!(mu1 > 0.0) || !(mu2 > 0.0)) throw domain_error("build_xor_mixture: mean norms must be positive");
  MixtureSpec spec;
  spec.dim = dim;
  auto axis = [dim](int r, double v) {
    Eigen::VectorXd m = Eigen::VectorXd::Zero(dim);
    m[r] = v;
    return m;
  };
  spec.clusters = {{axis(0, mu1), 1, 0.25}, {axis(0, -mu1), 1, 0.25},
                   {axis(1, mu2), -1, 0.25}, {axis(1, -mu2), -1, 0.25}};
  spec.covariance = CovarianceSpec::isotropic(sigma2);
  spec.validate();
  return spec;
}

inline MixtureSpec build_xor_mixture(int dim, double mu_norm, double sigma2) {
  return build_xor_axes_mixture(dim, mu_norm, mu_norm, sigma2);
}

// One positive cluster at the origin (weight 1/2), negative clusters at
// +mu_a e1 and -mu_b e1 (weight 1/4 each).
inline MixtureSpec build_three_cluster_mixture(int dim, double mu_a, double mu_b, double sigma2) {
  if (dim < 1) throw domain_error("build_three_cluster_mixture: invalid dimension");
  MixtureSpec spec;
  spec.dim = dim;
  Eigen::VectorXd zero = Eigen::VectorXd::Zero(dim);
  Eigen::VectorXd a = zero, b = zero;
  a[0] = mu_a;
  b[0] = -mu_b;
  spec.clusters = {{zero, 1, 0.5}, {a, -1, 0.25}, {b, -1, 0.25}};
  spec.covariance = CovarianceSpec::isotropic(sigma2);
  spec.validate();
  return spec;
}

inline MixtureSpec build_three_cluster_mixture(int dim, double mu0, double sigma2) {
  return build_three_cluster_mixture(dim, mu0, mu0, sigma2);
}

// Random means with i.i.d. standard normal entries, labels alternating
// (+, -, +, ...), equal weights, and a dense covariance A^T A / (2D) with A a
// 2D x D standard normal matrix (spectrum bounded away from zero).
inline MixtureSpec build_random_mixture(int dim, int n_clusters, Rng& rng) {
  if (dim < 1 || n_clusters < 2) throw domain_error("build_random_mixture: need dim >= 1 and at least 2 clusters");
  MixtureSpec spec;
  spec.dim = dim;
  for (int a = 0; a < n_clusters; ++a)
    spec.clusters.push_back({rng.normal_vector(dim), a % 2 == 0 ? 1 : -1, 1.0 / n_clusters});
  double total = 0.0;
  for (auto& c : spec.clusters) total += c.weight;
  spec.clusters.back().weight += 1.0 - total;
  Eigen::MatrixXd a = rng.normal_matrix(2 * dim, dim);
  Eigen::MatrixXd omega = a.transpose() * a / (2.0 * dim);
  omega = 0.5 * (omega + omega.transpose()).eval();
  spec.covariance = CovarianceSpec::dense(std::move(omega));
  spec.validate();
  return spec;
}

}  // namespace gmix
