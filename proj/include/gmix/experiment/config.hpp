#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "../activation.hpp"
#include "../errors.hpp"
#include "../mixture.hpp"
#include "../mixture_io.hpp"
#include "../rng.hpp"
#include "csv.hpp"
#include "json.hpp"

namespace gmix {

using json = nlohmann::json;

// Checked access to one JSON object. Every key that is read is recorded, so
// finish() can reject misspelled or unsupported fields.
class FieldReader {
public:
  FieldReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail("", "must be an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  [[noreturn]] void fail(const std::string& key, const std::string& what) const {
    std::string where = path_;
    if (!key.empty()) where += (where.empty() ? "" : ".") + key;
    throw validation_error("config field '" + where + "': " + what);
  }

  const json& raw(const std::string& key) {
    used_.insert(key);
    if (!j_.contains(key)) fail(key, "is required");
    return j_.at(key);
  }

  double number(const std::string& key) {
    const json& v = raw(key);
    if (!v.is_number()) fail(key, "must be a number");
    double x = v.get<double>();
    if (!std::isfinite(x)) fail(key, "must be finite");
    return x;
  }

  double number(const std::string& key, double fallback) { return has(key) ? number(key) : mark(key, fallback); }

  double positive(const std::string& key) {
    double x = number(key);
    if (!(x > 0.0)) fail(key, "must be positive");
    return x;
  }

  double positive(const std::string& key, double fallback) { return has(key) ? positive(key) : mark(key, fallback); }

  double nonnegative(const std::string& key) {
    double x = number(key);
    if (!(x >= 0.0)) fail(key, "must be >= 0");
    return x;
  }

  long long integer(const std::string& key, long long min_value) {
    const json& v = raw(key);
    if (!v.is_number_integer()) fail(key, "must be an integer");
    long long x = v.get<long long>();
    if (x < min_value) fail(key, "must be >= " + std::to_string(min_value));
    return x;
  }

  long long integer(const std::string& key, long long min_value, long long fallback) {
    return has(key) ? integer(key, min_value) : mark(key, fallback);
  }

  std::uint64_t seed(const std::string& key) {
    const json& v = raw(key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0))
      fail(key, "must be a non-negative integer");
    return v.get<std::uint64_t>();
  }

  bool boolean(const std::string& key, bool fallback) {
    if (!has(key)) return mark(key, fallback);
    const json& v = raw(key);
    if (!v.is_boolean()) fail(key, "must be true or false");
    return v.get<bool>();
  }

  std::string string(const std::string& key) {
    const json& v = raw(key);
    if (!v.is_string()) fail(key, "must be a string");
    return v.get<std::string>();
  }

  std::string string(const std::string& key, const std::string& fallback) {
    return has(key) ? string(key) : mark(key, fallback);
  }

  std::vector<double> numbers(const std::string& key, bool positive_only = false) {
    const json& v = raw(key);
    if (!v.is_array() || v.empty()) fail(key, "must be a non-empty array of numbers");
    std::vector<double> out;
    for (const auto& e : v) {
      if (!e.is_number()) fail(key, "must be a non-empty array of numbers");
      double x = e.get<double>();
      if (!std::isfinite(x) || (positive_only && !(x > 0.0)))
        fail(key, positive_only ? "entries must be positive" : "entries must be finite");
      out.push_back(x);
    }
    return out;
  }

  std::vector<long long> integers(const std::string& key, long long min_value) {
    const json& v = raw(key);
    if (!v.is_array() || v.empty()) fail(key, "must be a non-empty array of integers");
    std::vector<long long> out;
    for (const auto& e : v) {
      if (!e.is_number_integer() || e.get<long long>() < min_value)
        fail(key, "entries must be integers >= " + std::to_string(min_value));
      out.push_back(e.get<long long>());
    }
    return out;
  }

  FieldReader object(const std::string& key) { return FieldReader(raw(key), path_.empty() ? key : path_ + "." + key); }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!used_.count(it.key())) fail(it.key(), "unknown field");
  }

  const std::string& path() const { return path_; }

private:
  template <class T>
  T mark(const std::string& key, T value) {
    used_.insert(key);
    return value;
  }

  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

// A length that may scale with the input dimension: "sqrtD", "D", "2*sqrtD",
// "0.5*D" or a plain number.
struct DimExpr {
  enum class Unit { one, sqrtD, D };
  double coef = 1.0;
  Unit unit = Unit::one;

  double at(int dim) const {
    switch (unit) {
      case Unit::one: return coef;
      case Unit::sqrtD: return coef * std::sqrt(static_cast<double>(dim));
      case Unit::D: return coef * dim;
    }
    return coef;
  }

  json to_json() const {
    if (unit == Unit::one) return coef;
    std::string u = unit == Unit::sqrtD ? "sqrtD" : "D";
    return coef == 1.0 ? u : format_double(coef) + "*" + u;
  }

  static DimExpr parse(const json& v, const FieldReader& where, const std::string& key) {
    DimExpr e;
    if (v.is_number()) {
      e.coef = v.get<double>();
    } else if (v.is_string()) {
      std::string s = v.get<std::string>();
      std::string unit = s;
      auto star = s.find('*');
      try {
        if (star != std::string::npos) {
          e.coef = parse_double(s.substr(0, star));
          unit = s.substr(star + 1);
        }
      } catch (const error&) {
        where.fail(key, "bad coefficient in '" + s + "'");
      }
      if (unit == "sqrtD") e.unit = Unit::sqrtD;
      else if (unit == "D") e.unit = Unit::D;
      else where.fail(key, "expected a number, 'sqrtD', 'D' or 'c*sqrtD' / 'c*D', got '" + s + "'");
    } else {
      where.fail(key, "must be a number or a dimension expression");
    }
    if (!(e.coef > 0.0) || !std::isfinite(e.coef)) where.fail(key, "must be positive");
    return e;
  }
};

struct MixtureConfig {
  std::string builder;  // xor, xor_axes, three_cluster, random, file
  DimExpr mu;
  DimExpr mu2;
  int n_clusters = 0;
  std::string path;

  bool uses_sigma() const { return builder != "random" && builder != "file"; }
  bool is_unit_snr_xor() const {
    return builder == "xor" && mu.unit == DimExpr::Unit::sqrtD && mu.coef == 1.0;
  }

  MixtureSpec build(int dim, double sigma, std::uint64_t seed) const {
    double s2 = sigma * sigma;
    if (builder == "xor") return build_xor_mixture(dim, mu.at(dim), s2);
    if (builder == "xor_axes") return build_xor_axes_mixture(dim, mu.at(dim), mu2.at(dim), s2);
    if (builder == "three_cluster") return build_three_cluster_mixture(dim, mu.at(dim), mu2.at(dim), s2);
    if (builder == "random") {
      Rng rng(hash_combine(seed, fnv1a("mixture")));
      return build_random_mixture(dim, n_clusters, rng);
    }
    return load_mixture(path);
  }

  json to_json() const {
    json j;
    j["builder"] = builder;
    if (builder == "xor") j["mu"] = mu.to_json();
    if (builder == "xor_axes" || builder == "three_cluster") {
      j["mu"] = mu.to_json();
      j["mu2"] = mu2.to_json();
    }
    if (builder == "random") j["n_clusters"] = n_clusters;
    if (builder == "file") j["path"] = path;
    return j;
  }

  static MixtureConfig parse(FieldReader r) {
    MixtureConfig m;
    m.builder = r.string("builder");
    if (m.builder == "xor") {
      m.mu = DimExpr::parse(r.raw("mu"), r, "mu");
    } else if (m.builder == "xor_axes" || m.builder == "three_cluster") {
      m.mu = DimExpr::parse(r.raw("mu"), r, "mu");
      m.mu2 = r.has("mu2") ? DimExpr::parse(r.raw("mu2"), r, "mu2") : m.mu;
      if (m.builder == "xor_axes" && !r.has("mu2")) r.fail("mu2", "is required for xor_axes");
    } else if (m.builder == "random") {
      m.n_clusters = static_cast<int>(r.integer("n_clusters", 2));
    } else if (m.builder == "file") {
      m.path = r.string("path");
    } else {
      r.fail("builder", "unknown mixture builder '" + m.builder +
                            "' (expected xor, xor_axes, three_cluster, random or file)");
    }
    r.finish();
    return m;
  }
};

// Noise width given either as sigma or as its square sigma2. Stored as sigma.
inline double read_sigma(FieldReader& r) {
  if (r.has("sigma") && r.has("sigma2")) r.fail("sigma", "give either sigma or sigma2, not both");
  if (r.has("sigma2")) return std::sqrt(r.positive("sigma2"));
  return r.positive("sigma");
}

inline std::vector<double> read_sigma_axis(FieldReader& r) {
  if (r.has("sigma") && r.has("sigma2")) r.fail("sigma", "give either sigma or sigma2, not both");
  if (r.has("sigma2")) {
    auto v = r.numbers("sigma2", true);
    for (double& x : v) x = std::sqrt(x);
    return v;
  }
  return r.numbers("sigma", true);
}

struct OdeRunParams {
  int K = 0;
  int D = 0;
  double sigma = 0.0;
  double lr = 0.0;
  double weight_decay = 0.0;
  double sigma0 = 0.0;
  double t_max = 0.0;
  double dt = 0.05;
  long long mc_samples = 10000;
  int n_obs = 40;
  bool log_times = true;
  bool compare_sgd = false;
  bool order_parameters = false;
  long long eval_set_size = 10000;
};

struct SgdParams {
  int K = 0;  // 2lnn only
  int P = 0;  // rf only
  int D = 0;
  double sigma = 0.0;
  double lr = 0.0;
  double weight_decay = 0.0;
  double sigma0 = 0.0;
  long long steps = 0;
  long long eval_every = 0;
  long long eval_set_size = 10000;
};

struct FixedPointSweepParams {
  int K = 0;
  double sigma = 0.0;
  double lr = 0.0;
  std::vector<double> kappa;
  int replicates = 1;
  std::string v_rule = "stationary";
  int n_angles = 1024;
  double tol = 1e-8;
};

struct RfSimulationParams {
  double lr = 0.0;
  long long steps = 0;
  long long eval_set_size = 20000;
  double average_tail = 0.5;  // fraction of the run whose iterates are averaged
};

// Shared by rf_asymptotics_sweep and master_curve. For master_curve the
// sigma axis may be replaced by scaling_var = sigma sqrt(D) / P^(1/4).
struct RfSweepParams {
  std::vector<double> sigma;
  std::vector<double> scaling_var;
  std::vector<double> D;
  std::vector<double> gamma;
  std::string offdiagonal = "auto";
  std::string centering = "mixture_mean";
  std::optional<RfSimulationParams> simulate;
};

struct SnrRegime {
  std::string name;
  MixtureConfig mixture;
};

struct SnrComparisonParams {
  std::string method;  // analytic or simulation
  // analytic
  std::vector<double> snr;
  int K = 0;
  double lr = 0.0;
  double weight_decay = 0.0;
  int rf_D = 0;
  double rf_gamma = 0.0;
  // simulation
  std::vector<SnrRegime> regimes;
  int D = 0;
  double sigma = 0.0;
  double sigma0 = 0.0;
  double gamma = 0.0;
  long long steps = 0;
  long long eval_every = 0;
  long long eval_set_size = 10000;
};

struct OverparamParams {
  std::vector<long long> K;
  int replicates = 0;
  int D = 0;
  double sigma = 0.0;
  double lr = 0.0;
  double weight_decay = 0.0;
  double sigma0 = 0.0;
  long long steps = 0;
  long long eval_set_size = 10000;
  double threshold_factor = 1.5;
};

inline const std::vector<std::string>& experiment_kinds() {
  static const std::vector<std::string> k = {"ode_run",         "sgd_2lnn",        "sgd_rf",         "fixed_point_sweep",
                                             "rf_asymptotics_sweep", "snr_comparison", "overparam_sweep", "master_curve"};
  return k;
}

struct ExperimentConfig {
  std::string kind;
  std::string name;
  std::uint64_t seed = 0;
  Activation activation = Activation::relu;
  std::optional<MixtureConfig> mixture;
  OdeRunParams ode;
  SgdParams sgd;
  FixedPointSweepParams fixed_point;
  RfSweepParams rf;
  SnrComparisonParams snr;
  OverparamParams overparam;

  // Fully resolved parameters with sorted keys; the basis of the config hash.
  json resolved() const;

  std::string canonical() const { return resolved().dump(); }
  std::uint64_t hash() const { return fnv1a(canonical()); }
  std::string hash_hex() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash()));
    return buf;
  }
};

namespace detail {

inline int read_dim(FieldReader& r, const std::string& key) { return static_cast<int>(r.integer(key, 2)); }

inline void parse_ode(FieldReader& r, ExperimentConfig& c) {
  auto& p = c.ode;
  p.K = static_cast<int>(r.integer("K", 1));
  p.lr = r.positive("lr");
  p.weight_decay = r.nonnegative("weight_decay");
  p.sigma0 = r.positive("sigma0");
  p.t_max = r.positive("t_max");
  p.dt = r.positive("dt", 0.05);
  p.mc_samples = r.integer("mc_samples", 1, 10000);
  p.n_obs = static_cast<int>(r.integer("n_obs", 2, 40));
  p.log_times = r.boolean("log_times", true);
  p.compare_sgd = r.boolean("compare_sgd", false);
  p.order_parameters = r.boolean("order_parameters", false);
  p.eval_set_size = r.integer("eval_set_size", 1, 10000);
}

inline void parse_sgd(FieldReader& r, ExperimentConfig& c, bool rf) {
  auto& p = c.sgd;
  if (rf) {
    if (r.has("P") == r.has("gamma")) r.fail("P", "give exactly one of P and gamma");
    p.P = r.has("P") ? static_cast<int>(r.integer("P", 1))
                     : static_cast<int>(std::llround(r.positive("gamma") * p.D));
    if (p.P < 1) r.fail("gamma", "gives P < 1");
  } else {
    p.K = static_cast<int>(r.integer("K", 1));
    p.sigma0 = r.positive("sigma0");
  }
  p.lr = r.positive("lr");
  p.weight_decay = r.nonnegative("weight_decay");
  p.steps = r.integer("steps", 1);
  p.eval_every = r.integer("eval_every", 0, std::max<long long>(1, p.steps / 50));
  p.eval_set_size = r.integer("eval_set_size", 1, 10000);
}

inline void parse_fixed_point(FieldReader& r, ExperimentConfig& c) {
  auto& p = c.fixed_point;
  p.K = static_cast<int>(r.integer("K", 2));
  if (p.K % 2 != 0) r.fail("K", "must be even for the symmetric XOR ansatz");
  p.lr = r.positive("lr");
  p.sigma = read_sigma(r);
  p.replicates = static_cast<int>(r.integer("replicates", 1, 1));
  p.v_rule = r.string("v_rule", "stationary");
  if (p.v_rule != "stationary" && p.v_rule != "output_constraint")
    r.fail("v_rule", "must be stationary or output_constraint");
  p.n_angles = static_cast<int>(r.integer("n_angles", 16, 1024));
  p.tol = r.positive("tol", 1e-8);
  FieldReader g = r.object("grid");
  p.kappa = g.numbers("kappa");
  for (double k : p.kappa)
    if (k < 0.0) g.fail("kappa", "entries must be >= 0");
  g.finish();
}

inline void parse_rf_sweep(FieldReader& r, ExperimentConfig& c, bool master) {
  auto& p = c.rf;
  FieldReader g = r.object("grid");
  if (master && g.has("scaling_var")) {
    if (g.has("sigma") || g.has("sigma2")) g.fail("scaling_var", "give either scaling_var or sigma, not both");
    p.scaling_var = g.numbers("scaling_var", true);
  } else {
    p.sigma = read_sigma_axis(g);
  }
  p.D = g.numbers("D", true);
  for (double d : p.D)
    if (d != std::floor(d) || d < 2) g.fail("D", "entries must be integers >= 2");
  p.gamma = g.numbers("gamma", true);
  g.finish();
  p.offdiagonal = r.string("offdiagonal", "auto");
  if (p.offdiagonal != "auto" && p.offdiagonal != "exact" && p.offdiagonal != "mean_field" &&
      p.offdiagonal != "first_order")
    r.fail("offdiagonal", "must be auto, exact, mean_field or first_order");
  p.centering = r.string("centering", "mixture_mean");
  if (p.centering != "mixture_mean" && p.centering != "none") r.fail("centering", "must be mixture_mean or none");
  if (r.has("simulate")) {
    FieldReader s = r.object("simulate");
    RfSimulationParams sim;
    sim.lr = s.positive("lr");
    sim.steps = s.integer("steps", 1);
    sim.eval_set_size = s.integer("eval_set_size", 1, 20000);
    sim.average_tail = s.number("average_tail", 0.5);
    if (!(sim.average_tail >= 0.0 && sim.average_tail < 1.0)) s.fail("average_tail", "must be in [0, 1)");
    s.finish();
    p.simulate = sim;
  }
}

inline void parse_snr(FieldReader& r, ExperimentConfig& c) {
  auto& p = c.snr;
  p.method = r.string("method");
  if (p.method == "analytic") {
    p.K = static_cast<int>(r.integer("K", 2));
    if (p.K % 2 != 0) r.fail("K", "must be even for the symmetric XOR ansatz");
    p.lr = r.positive("lr");
    p.weight_decay = r.nonnegative("weight_decay");
    p.rf_D = static_cast<int>(r.integer("rf_D", 2));
    p.rf_gamma = r.positive("rf_gamma");
    FieldReader g = r.object("grid");
    p.snr = g.numbers("snr", true);
    g.finish();
  } else if (p.method == "simulation") {
    p.K = static_cast<int>(r.integer("K", 1));
    p.D = read_dim(r, "D");
    p.sigma = read_sigma(r);
    p.sigma0 = r.positive("sigma0");
    p.gamma = r.positive("gamma");
    p.lr = r.positive("lr");
    p.weight_decay = r.nonnegative("weight_decay");
    p.steps = r.integer("steps", 1);
    p.eval_every = r.integer("eval_every", 1, std::max<long long>(1, p.steps / 50));
    p.eval_set_size = r.integer("eval_set_size", 1, 10000);
    const json& regs = r.raw("regimes");
    if (!regs.is_array() || regs.empty()) r.fail("regimes", "must be a non-empty array");
    for (std::size_t i = 0; i < regs.size(); ++i) {
      FieldReader rr(regs[i], "regimes[" + std::to_string(i) + "]");
      SnrRegime reg;
      reg.name = rr.string("name");
      reg.mixture = MixtureConfig::parse(rr.object("mixture"));
      rr.finish();
      p.regimes.push_back(std::move(reg));
    }
  } else {
    r.fail("method", "must be analytic or simulation");
  }
}

inline void parse_overparam(FieldReader& r, ExperimentConfig& c) {
  auto& p = c.overparam;
  p.D = read_dim(r, "D");
  p.sigma = read_sigma(r);
  p.lr = r.positive("lr");
  p.weight_decay = r.nonnegative("weight_decay");
  p.sigma0 = r.positive("sigma0");
  p.steps = r.integer("steps", 1);
  p.replicates = static_cast<int>(r.integer("replicates", 1));
  p.eval_set_size = r.integer("eval_set_size", 1, 10000);
  p.threshold_factor = r.positive("threshold_factor", 1.5);
  FieldReader g = r.object("grid");
  p.K = g.integers("K", 1);
  g.finish();
}

}  // namespace detail

inline ExperimentConfig parse_config(const json& j) {
  FieldReader r(j, "");
  ExperimentConfig c;
  c.kind = r.string("kind");
  bool known = false;
  for (const auto& k : experiment_kinds()) known = known || k == c.kind;
  if (!known) r.fail("kind", "unknown kind '" + c.kind + "'");
  c.name = r.string("name", c.kind);
  c.seed = r.seed("seed");
  c.activation = Activation::relu;
  if (r.has("activation")) {
    try {
      c.activation = parse_activation(r.string("activation"));
    } catch (const validation_error& e) {
      r.fail("activation", e.what());
    }
  }

  const bool needs_mixture = c.kind == "ode_run" || c.kind == "sgd_2lnn" || c.kind == "sgd_rf" ||
                             c.kind == "overparam_sweep" || c.kind == "rf_asymptotics_sweep" ||
                             c.kind == "master_curve";
  if (needs_mixture) c.mixture = MixtureConfig::parse(r.object("mixture"));

  if (c.kind == "ode_run") {
    c.ode.D = detail::read_dim(r, "D");
    if (c.mixture->uses_sigma()) c.ode.sigma = read_sigma(r);
    detail::parse_ode(r, c);
  } else if (c.kind == "sgd_2lnn" || c.kind == "sgd_rf") {
    c.sgd.D = detail::read_dim(r, "D");
    if (c.mixture->uses_sigma()) c.sgd.sigma = read_sigma(r);
    detail::parse_sgd(r, c, c.kind == "sgd_rf");
  } else if (c.kind == "fixed_point_sweep") {
    detail::parse_fixed_point(r, c);
  } else if (c.kind == "rf_asymptotics_sweep" || c.kind == "master_curve") {
    detail::parse_rf_sweep(r, c, c.kind == "master_curve");
  } else if (c.kind == "snr_comparison") {
    detail::parse_snr(r, c);
  } else if (c.kind == "overparam_sweep") {
    detail::parse_overparam(r, c);
  }
  r.finish();

  if (c.activation != Activation::relu &&
      (c.kind == "fixed_point_sweep" || c.kind == "rf_asymptotics_sweep" || c.kind == "master_curve" ||
       c.kind == "snr_comparison" || c.kind == "sgd_rf"))
    throw validation_error("config field 'activation': kind '" + c.kind + "' supports relu only");
  if (c.mixture && (c.kind == "rf_asymptotics_sweep" || c.kind == "master_curve") && c.mixture->builder != "xor" &&
      c.mixture->builder != "xor_axes" && c.mixture->builder != "three_cluster")
    throw validation_error("config field 'mixture.builder': sweeps over sigma need an isotropic builder");
  if (c.kind == "overparam_sweep" && c.mixture && !c.mixture->is_unit_snr_xor())
    throw validation_error("config field 'mixture': overparam_sweep needs the xor builder with mu = sqrtD "
                           "(its convergence threshold is relative to the xor oracle)");
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw validation_error("cannot open config '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw validation_error("config '" + path + "' is not valid JSON: " + e.what());
  }
  return parse_config(j);
}

inline json ExperimentConfig::resolved() const {
  json j;
  j["kind"] = kind;
  j["name"] = name;
  j["seed"] = seed;
  j["activation"] = to_string(activation);
  if (mixture) j["mixture"] = mixture->to_json();
  if (kind == "ode_run") {
    const auto& p = ode;
    j["K"] = p.K;
    j["D"] = p.D;
    if (mixture->uses_sigma()) j["sigma"] = p.sigma;
    j["lr"] = p.lr;
    j["weight_decay"] = p.weight_decay;
    j["sigma0"] = p.sigma0;
    j["t_max"] = p.t_max;
    j["dt"] = p.dt;
    j["mc_samples"] = p.mc_samples;
    j["n_obs"] = p.n_obs;
    j["log_times"] = p.log_times;
    j["compare_sgd"] = p.compare_sgd;
    j["order_parameters"] = p.order_parameters;
    j["eval_set_size"] = p.eval_set_size;
  } else if (kind == "sgd_2lnn" || kind == "sgd_rf") {
    const auto& p = sgd;
    if (kind == "sgd_2lnn") {
      j["K"] = p.K;
      j["sigma0"] = p.sigma0;
    } else {
      j["P"] = p.P;
    }
    j["D"] = p.D;
    if (mixture->uses_sigma()) j["sigma"] = p.sigma;
    j["lr"] = p.lr;
    j["weight_decay"] = p.weight_decay;
    j["steps"] = p.steps;
    j["eval_every"] = p.eval_every;
    j["eval_set_size"] = p.eval_set_size;
  } else if (kind == "fixed_point_sweep") {
    const auto& p = fixed_point;
    j["K"] = p.K;
    j["sigma"] = p.sigma;
    j["lr"] = p.lr;
    j["replicates"] = p.replicates;
    j["v_rule"] = p.v_rule;
    j["n_angles"] = p.n_angles;
    j["tol"] = p.tol;
    j["grid"]["kappa"] = p.kappa;
  } else if (kind == "rf_asymptotics_sweep" || kind == "master_curve") {
    const auto& p = rf;
    if (!p.scaling_var.empty()) j["grid"]["scaling_var"] = p.scaling_var;
    else j["grid"]["sigma"] = p.sigma;
    j["grid"]["D"] = p.D;
    j["grid"]["gamma"] = p.gamma;
    j["offdiagonal"] = p.offdiagonal;
    j["centering"] = p.centering;
    if (p.simulate) {
      j["simulate"]["lr"] = p.simulate->lr;
      j["simulate"]["steps"] = p.simulate->steps;
      j["simulate"]["eval_set_size"] = p.simulate->eval_set_size;
      j["simulate"]["average_tail"] = p.simulate->average_tail;
    }
  } else if (kind == "snr_comparison") {
    const auto& p = snr;
    j["method"] = p.method;
    j["lr"] = p.lr;
    j["weight_decay"] = p.weight_decay;
    j["K"] = p.K;
    if (p.method == "analytic") {
      j["rf_D"] = p.rf_D;
      j["rf_gamma"] = p.rf_gamma;
      j["grid"]["snr"] = p.snr;
    } else {
      j["D"] = p.D;
      j["sigma"] = p.sigma;
      j["sigma0"] = p.sigma0;
      j["gamma"] = p.gamma;
      j["steps"] = p.steps;
      j["eval_every"] = p.eval_every;
      j["eval_set_size"] = p.eval_set_size;
      j["regimes"] = json::array();
      for (const auto& r : p.regimes) j["regimes"].push_back({{"name", r.name}, {"mixture", r.mixture.to_json()}});
    }
  } else if (kind == "overparam_sweep") {
    const auto& p = overparam;
    j["D"] = p.D;
    j["sigma"] = p.sigma;
    j["lr"] = p.lr;
    j["weight_decay"] = p.weight_decay;
    j["sigma0"] = p.sigma0;
    j["steps"] = p.steps;
    j["replicates"] = p.replicates;
    j["eval_set_size"] = p.eval_set_size;
    j["threshold_factor"] = p.threshold_factor;
    j["grid"]["K"] = p.K;
  }
  return j;
}

// Seed of one grid cell: depends only on the master seed and the cell's
// coordinates, so reordering or extending the grid leaves it unchanged.
inline std::uint64_t cell_seed(std::uint64_t master, const std::string& coordinates) {
  return hash_combine(master, fnv1a(coordinates));
}

}  // namespace gmix
