#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <string_view>

#include <Eigen/Core>

#include "errors.hpp"

namespace gmix {

// scaled_erf is g(x) = erf(x / sqrt 2), the sigmoidal choice of the ODE
// comparisons. relu'(0) is taken as 0.
enum class Activation { relu, scaled_erf };

inline double act_value(Activation a, double x) {
  switch (a) {
    case Activation::relu: return x > 0.0 ? x : 0.0;
    case Activation::scaled_erf: return std::erf(x * std::numbers::sqrt2 / 2.0);
  }
  return 0.0;
}

inline double act_derivative(Activation a, double x) {
  switch (a) {
    case Activation::relu: return x > 0.0 ? 1.0 : 0.0;
    case Activation::scaled_erf:
      return std::sqrt(2.0 / std::numbers::pi) * std::exp(-0.5 * x * x);
  }
  return 0.0;
}

inline std::string to_string(Activation a) {
  return a == Activation::relu ? "relu" : "scaled_erf";
}

inline Activation parse_activation(std::string_view s) {
  if (s == "relu") return Activation::relu;
  if (s == "scaled_erf" || s == "erf") return Activation::scaled_erf;
  throw validation_error("unknown activation '" + std::string(s) + "' (expected relu or scaled_erf)");
}

// Elementwise application to an Eigen array expression, writing into out.
template <class In, class Out>
void apply_activation(Activation a, const In& in, Out& out) {
  out.resize(in.rows(), in.cols());
  if (a == Activation::relu) {
    out = in.array().max(0.0).matrix();
  } else {
    for (Eigen::Index j = 0; j < in.cols(); ++j)
      for (Eigen::Index i = 0; i < in.rows(); ++i) out(i, j) = act_value(a, in(i, j));
  }
}

template <class In, class Out>
void apply_derivative(Activation a, const In& in, Out& out) {
  out.resize(in.rows(), in.cols());
  if (a == Activation::relu) {
    out = (in.array() > 0.0).template cast<double>().matrix();
  } else {
    for (Eigen::Index j = 0; j < in.cols(); ++j)
      for (Eigen::Index i = 0; i < in.rows(); ++i) out(i, j) = act_derivative(a, in(i, j));
  }
}

}  // namespace gmix
