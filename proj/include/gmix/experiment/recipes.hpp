#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "../errors.hpp"
#include "config.hpp"

namespace gmix {

struct Recipe {
  std::string name;
  std::string description;
  std::string config;  // JSON text
};

// Built-in figure recipes. Grids that the figures do not tabulate use
// log-spaced values over the visible axis range.
inline const std::vector<Recipe>& builtin_recipes() {
  static const std::vector<Recipe> recipes = {
      {"fig1", "long-time class error vs snr: 2LNN fixed point (K=4), RF asymptotics (D=10000, P=2D), oracle",
       R"({
  "kind": "snr_comparison",
  "name": "fig1",
  "seed": 1,
  "method": "analytic",
  "K": 4,
  "lr": 0.1,
  "weight_decay": 0.001,
  "rf_D": 10000,
  "rf_gamma": 2,
  "grid": {"snr": [0.1, 0.2, 0.3, 0.5, 0.7, 1, 1.5, 2, 3, 5, 7, 10]}
})"},
      {"fig2", "ODE vs online SGD on XOR: K=8, D=1000, sigma=0.05, lr=0.1, kappa=1e-2, sigma0=1",
       R"({
  "kind": "ode_run",
  "name": "fig2",
  "seed": 2,
  "mixture": {"builder": "xor", "mu": "sqrtD"},
  "K": 8,
  "D": 1000,
  "sigma": 0.05,
  "lr": 0.1,
  "weight_decay": 0.01,
  "sigma0": 1,
  "t_max": 1000,
  "n_obs": 30,
  "compare_sgd": true
})"},
      {"fig3", "fixed-point pmse vs weight decay: sigma^2=0.1, K=4, lr=0.1, 10 runs",
       R"({
  "kind": "fixed_point_sweep",
  "name": "fig3",
  "seed": 3,
  "K": 4,
  "sigma2": 0.1,
  "lr": 0.1,
  "replicates": 10,
  "grid": {"kappa": [0.0001, 0.0003, 0.001, 0.003, 0.01, 0.03, 0.1, 0.3, 1]}
})"},
      {"fig4", "RF master curve: class error vs sigma D^(1/2)/P^(1/4) over D and gamma",
       R"({
  "kind": "master_curve",
  "name": "fig4",
  "seed": 4,
  "mixture": {"builder": "xor", "mu": "sqrtD"},
  "grid": {
    "scaling_var": [0.25, 0.5, 0.75, 1, 1.5, 2, 3],
    "D": [800, 1600],
    "gamma": [4, 8]
  }
})"},
      {"fig5", "XOR in three snr regimes: online SGD of a K=10 2LNN and RF with P=2D, D=1000, sigma^2=0.05",
       R"({
  "kind": "snr_comparison",
  "name": "fig5",
  "seed": 5,
  "method": "simulation",
  "D": 1000,
  "sigma2": 0.05,
  "K": 10,
  "sigma0": 0.01,
  "gamma": 2,
  "lr": 0.1,
  "weight_decay": 0,
  "steps": 1000000,
  "eval_every": 20000,
  "regimes": [
    {"name": "low", "mixture": {"builder": "xor", "mu": "sqrtD"}},
    {"name": "high", "mixture": {"builder": "xor", "mu": "D"}},
    {"name": "mixed", "mixture": {"builder": "xor_axes", "mu": "D", "mu2": "sqrtD"}}
  ]
})"},
      {"fig7", "three-cluster mixture in three snr regimes: K=10 2LNN vs RF with P=2D, D=1000, sigma^2=0.05",
       R"({
  "kind": "snr_comparison",
  "name": "fig7",
  "seed": 7,
  "method": "simulation",
  "D": 1000,
  "sigma2": 0.05,
  "K": 10,
  "sigma0": 0.01,
  "gamma": 2,
  "lr": 0.1,
  "weight_decay": 0,
  "steps": 1000000,
  "eval_every": 20000,
  "regimes": [
    {"name": "low", "mixture": {"builder": "three_cluster", "mu": "sqrtD"}},
    {"name": "high", "mixture": {"builder": "three_cluster", "mu": "D"}},
    {"name": "mixed", "mixture": {"builder": "three_cluster", "mu": "D", "mu2": "sqrtD"}}
  ]
})"},
      {"overparam", "fraction of SGD runs reaching near-oracle error vs K: D=800, sigma^2=0.1, 20 seeds, 1e5 steps",
       R"({
  "kind": "overparam_sweep",
  "name": "overparam",
  "seed": 8,
  "mixture": {"builder": "xor", "mu": "sqrtD"},
  "D": 800,
  "sigma2": 0.1,
  "lr": 0.1,
  "weight_decay": 0,
  "sigma0": 1,
  "steps": 100000,
  "replicates": 20,
  "threshold_factor": 2.5,
  "grid": {"K": [4, 5, 6, 7, 8, 9, 10, 11, 12]}
})"},
      {"odevsim", "ODE vs SGD for K=3 scaled-erf network on a random 4-cluster mixture, D=800",
       R"({
  "kind": "ode_run",
  "name": "odevsim",
  "seed": 9,
  "activation": "scaled_erf",
  "mixture": {"builder": "random", "n_clusters": 4},
  "K": 3,
  "D": 800,
  "lr": 0.1,
  "weight_decay": 0,
  "sigma0": 1,
  "t_max": 1000,
  "n_obs": 30,
  "compare_sgd": true
})"},
  };
  return recipes;
}

inline const Recipe* find_recipe(std::string_view name) {
  for (const auto& r : builtin_recipes())
    if (r.name == name) return &r;
  return nullptr;
}

inline ExperimentConfig recipe_config(std::string_view name) {
  const Recipe* r = find_recipe(name);
  if (!r) throw validation_error("unknown recipe '" + std::string(name) + "'");
  return parse_config(json::parse(r->config));
}

}  // namespace gmix
