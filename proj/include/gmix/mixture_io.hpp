#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"
#include "mixture.hpp"

namespace gmix {

inline nlohmann::json mixture_to_json(const MixtureSpec& spec) {
  nlohmann::json j;
  j["dim"] = spec.dim;
  j["clusters"] = nlohmann::json::array();
  for (const auto& c : spec.clusters) {
    std::vector<double> mean(c.mean_scaled.data(), c.mean_scaled.data() + c.mean_scaled.size());
    j["clusters"].push_back({{"mean", mean}, {"label", c.label}, {"weight", c.weight}});
  }
  const auto& cov = spec.covariance;
  if (cov.is_isotropic()) {
    j["covariance"] = {{"kind", "isotropic"}, {"sigma2", cov.sigma2()}};
  } else {
    Eigen::MatrixXd m = cov.dense_matrix(spec.dim);
    nlohmann::json rows = nlohmann::json::array();
    for (int i = 0; i < m.rows(); ++i) {
      std::vector<double> row(static_cast<std::size_t>(m.cols()));
      for (int k = 0; k < m.cols(); ++k) row[static_cast<std::size_t>(k)] = m(i, k);
      rows.push_back(row);
    }
    j["covariance"] = {{"kind", "dense"}, {"matrix", rows}};
  }
  return j;
}

inline MixtureSpec mixture_from_json(const nlohmann::json& j) {
  MixtureSpec spec;
  try {
    spec.dim = j.at("dim").get<int>();
    for (const auto& c : j.at("clusters")) {
      auto mean = c.at("mean").get<std::vector<double>>();
      Cluster cl;
      cl.mean_scaled = Eigen::Map<const Eigen::VectorXd>(mean.data(), static_cast<Eigen::Index>(mean.size()));
      cl.label = c.at("label").get<int>();
      cl.weight = c.at("weight").get<double>();
      spec.clusters.push_back(std::move(cl));
    }
    const auto& cov = j.at("covariance");
    std::string kind = cov.at("kind").get<std::string>();
    if (kind == "isotropic") {
      spec.covariance = CovarianceSpec::isotropic(cov.at("sigma2").get<double>());
    } else if (kind == "dense") {
      auto rows = cov.at("matrix").get<std::vector<std::vector<double>>>();
      Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), rows.empty() ? 0 : static_cast<Eigen::Index>(rows[0].size()));
      for (std::size_t i = 0; i < rows.size(); ++i) {
        if (static_cast<Eigen::Index>(rows[i].size()) != m.cols())
          throw validation_error("mixture: covariance matrix rows have unequal length");
        for (std::size_t k = 0; k < rows[i].size(); ++k)
          m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k];
      }
      spec.covariance = CovarianceSpec::dense(std::move(m));
    } else {
      throw validation_error("mixture: unknown covariance kind '" + kind + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw validation_error(std::string("mixture: malformed JSON (") + e.what() + ")");
  }
  spec.validate();
  return spec;
}

inline MixtureSpec load_mixture(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw validation_error("mixture: cannot open '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw validation_error("mixture: parse failure in '" + path + "': " + e.what());
  }
  return mixture_from_json(j);
}

inline void save_mixture(const MixtureSpec& spec, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw validation_error("mixture: cannot write '" + path + "'");
  out << mixture_to_json(spec).dump(1) << '\n';
}

}  // namespace gmix
