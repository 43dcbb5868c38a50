#pragma once

#include <cmath>

#include <Eigen/Dense>

#include "activation.hpp"
#include "json.hpp"
#include "rng.hpp"

namespace gmix {

// phi(x) = sum_k v_k g(w_k . x / sqrt D); rows of W are the w_k.
struct TwoLayerNet {
  Eigen::MatrixXd W;
  Eigen::VectorXd v;
  Activation activation = Activation::relu;

  int K() const { return static_cast<int>(W.rows()); }
  int dim() const { return static_cast<int>(W.cols()); }

  // W first (row by row), then v, all i.i.d. N(0, sigma0^2).
  static TwoLayerNet random(int K, int dim, double sigma0, Activation act, Rng& rng) {
    TwoLayerNet net;
    net.activation = act;
    net.W.resize(K, dim);
    for (int k = 0; k < K; ++k)
      for (int r = 0; r < dim; ++r) net.W(k, r) = sigma0 * rng.normal();
    net.v.resize(K);
    for (int k = 0; k < K; ++k) net.v[k] = sigma0 * rng.normal();
    return net;
  }

  // Outputs for the rows of x.
  Eigen::VectorXd predict(const Eigen::MatrixXd& x) const {
    Eigen::MatrixXd lam = x * W.transpose() / std::sqrt(static_cast<double>(dim()));
    Eigen::MatrixXd g;
    apply_activation(activation, lam, g);
    return g * v;
  }
};

inline nlohmann::json net_to_json(const TwoLayerNet& net) {
  nlohmann::json j;
  j["activation"] = to_string(net.activation);
  j["W"] = nlohmann::json::array();
  for (int k = 0; k < net.K(); ++k) {
    std::vector<double> row(static_cast<std::size_t>(net.dim()));
    for (int r = 0; r < net.dim(); ++r) row[static_cast<std::size_t>(r)] = net.W(k, r);
    j["W"].push_back(row);
  }
  j["v"] = std::vector<double>(net.v.data(), net.v.data() + net.v.size());
  return j;
}

}  // namespace gmix
