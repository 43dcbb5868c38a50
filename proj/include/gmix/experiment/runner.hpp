#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "../dynamics.hpp"
#include "../fixed_point.hpp"
#include "../rf_theory.hpp"
#include "../sgd.hpp"
#include "config.hpp"
#include "csv.hpp"
#include "pool.hpp"
#include "svg.hpp"

namespace gmix {

inline constexpr const char* gmix_version = "0.1.0";

struct RunOptions {
  int jobs = 0;  // 0: GMIX_JOBS or 1
  std::function<void(const std::string&)> log;
};

struct RunOutput {
  CsvTable results;
  std::optional<CsvTable> runs;  // per-run rows of replicate sweeps
  PlotFigure figure;
  std::size_t n_cells = 0;
  std::vector<std::string> failures;
  double wall_seconds = 0.0;
  int jobs = 1;

  bool all_failed() const { return n_cells > 0 && failures.size() == n_cells; }
};

// ---------------------------------------------------------------- plotting

namespace detail {

inline std::vector<std::size_t> require_columns(const CsvTable& t, const std::vector<std::string>& cols) {
  std::vector<std::size_t> idx;
  for (const auto& c : cols) idx.push_back(t.index(c));
  return idx;
}

inline PlotSeries make_series(std::string name, std::vector<double> x, std::vector<double> y, SeriesStyle style) {
  PlotSeries s;
  s.name = std::move(name);
  s.x = std::move(x);
  s.y = std::move(y);
  s.style = style;
  return s;
}

// Rows grouped by the values of the given key columns, in order of first
// appearance. Returns (label, row indices).
inline std::vector<std::pair<std::string, std::vector<std::size_t>>> group_rows(const CsvTable& t,
                                                                             const std::vector<std::string>& keys) {
  std::vector<std::pair<std::string, std::vector<std::size_t>>> groups;
  std::vector<std::size_t> idx = require_columns(t, keys);
  for (std::size_t r = 0; r < t.size(); ++r) {
    std::string label;
    for (std::size_t k = 0; k < keys.size(); ++k)
      label += (k ? ", " : "") + keys[k] + "=" + t.rows()[r][idx[k]];
    auto it = std::find_if(groups.begin(), groups.end(), [&](const auto& g) { return g.first == label; });
    if (it == groups.end()) groups.push_back({label, {r}});
    else it->second.push_back(r);
  }
  return groups;
}

inline std::vector<double> pick(const std::vector<double>& v, const std::vector<std::size_t>& rows) {
  std::vector<double> out;
  for (auto r : rows) out.push_back(v[r]);
  return out;
}

inline PlotFigure plot_trajectory(const CsvTable& t, const std::string& title) {
  auto tt = t.numbers("t");
  PlotFigure f;
  f.title = title;
  for (std::string col : {"pmse", "class_error"}) {
    PlotPanel p;
    p.x_label = "t";
    p.y_label = col;
    p.log_x = true;
    p.series.push_back(make_series(t.has_column(col + "_sgd") ? "ODE" : "simulation", tt, t.numbers(col),
                                   t.has_column(col + "_sgd") ? SeriesStyle::line : SeriesStyle::line_markers));
    if (t.has_column(col + "_sgd"))
      p.series.push_back(make_series("SGD", tt, t.numbers(col + "_sgd"), SeriesStyle::markers));
    f.panels.push_back(std::move(p));
  }
  return f;
}

inline PlotFigure plot_fixed_point(const CsvTable& t, const std::string& title) {
  require_columns(t, {"kappa", "pmse", "class_error", "residual", "converged"});
  PlotFigure f;
  f.title = title;
  auto kappa = t.numbers("kappa");
  for (std::string col : {"pmse", "class_error"}) {
    auto y = t.numbers(col);
    std::vector<double> xs, mean, lo, hi;
    for (const auto& [label, rows] : group_rows(t, {"kappa"})) {
      double s = 0, s2 = 0;
      int n = 0;
      for (auto r : rows)
        if (std::isfinite(y[r])) {
          s += y[r];
          s2 += y[r] * y[r];
          ++n;
        }
      if (n == 0) continue;
      double m = s / n, sd = n > 1 ? std::sqrt(std::max(0.0, (s2 - n * m * m) / (n - 1))) : 0.0;
      xs.push_back(kappa[rows.front()]);
      mean.push_back(m);
      lo.push_back(m - sd);
      hi.push_back(m + sd);
    }
    PlotPanel p;
    p.x_label = "weight decay kappa";
    p.y_label = col;
    p.log_x = true;
    PlotSeries s = make_series("fixed point", xs, mean, SeriesStyle::line_markers);
    s.lo = lo;
    s.hi = hi;
    p.series.push_back(std::move(s));
    f.panels.push_back(std::move(p));
  }
  return f;
}

inline PlotFigure plot_rf_sweep(const CsvTable& t, const std::string& title, const std::string& x_col) {
  require_columns(t, {"sigma", "D", "P", "gamma", "class_error_analytic", x_col});
  PlotFigure f;
  f.title = title;
  PlotPanel p;
  p.x_label = x_col == "scaling_var" ? "sigma D^(1/2) / P^(1/4)" : "sigma";
  p.y_label = "class_error";
  auto x = t.numbers(x_col), ya = t.numbers("class_error_analytic");
  std::optional<std::vector<double>> ys;
  if (t.has_column("class_error_sim")) ys = t.numbers("class_error_sim");
  for (const auto& [label, rows] : group_rows(t, {"D", "gamma"})) {
    p.series.push_back(make_series(label, pick(x, rows), pick(ya, rows), SeriesStyle::line_markers));
    if (ys) p.series.push_back(make_series(label + " SGD", pick(x, rows), pick(*ys, rows), SeriesStyle::markers));
  }
  f.panels.push_back(std::move(p));
  return f;
}

inline PlotFigure plot_snr(const CsvTable& t, const std::string& title) {
  PlotFigure f;
  f.title = title;
  if (t.has_column("snr")) {
    require_columns(t, {"snr", "sigma", "oracle", "class_error_2lnn", "class_error_rf"});
    PlotPanel p;
    p.x_label = "snr";
    p.y_label = "class_error";
    p.log_x = true;
    auto x = t.numbers("snr");
    p.series.push_back(make_series("2LNN", x, t.numbers("class_error_2lnn"), SeriesStyle::line_markers));
    p.series.push_back(make_series("RF", x, t.numbers("class_error_rf"), SeriesStyle::line_markers));
    p.series.push_back(make_series("oracle", x, t.numbers("oracle"), SeriesStyle::line));
    p.references.push_back({0.5, "random guess"});
    f.panels.push_back(std::move(p));
    return f;
  }
  require_columns(t, {"regime", "model", "step", "t", "pmse", "class_error"});
  auto tt = t.numbers("t"), ec = t.numbers("class_error");
  auto regimes = group_rows(t, {"regime"});
  for (const auto& [label, rows] : regimes) {
    PlotPanel p;
    p.title = label;
    p.x_label = "t";
    p.y_label = "class_error";
    p.log_x = true;
    CsvTable sub(t.header());
    for (auto r : rows) sub.add_row(t.rows()[r]);
    for (const auto& [model, mrows] : group_rows(sub, {"model"})) {
      std::vector<double> x, y;
      for (auto r : mrows) {
        x.push_back(tt[rows[r]]);
        y.push_back(ec[rows[r]]);
      }
      p.series.push_back(make_series(model, x, y, SeriesStyle::line_markers));
    }
    f.panels.push_back(std::move(p));
  }
  return f;
}

inline PlotFigure plot_overparam(const CsvTable& t, const std::string& title) {
  require_columns(t, {"K", "n_runs", "n_failed", "converged_fraction", "class_error_mean", "class_error_std"});
  PlotFigure f;
  f.title = title;
  auto K = t.numbers("K");
  PlotPanel a;
  a.x_label = "K";
  a.y_label = "converged fraction";
  a.series.push_back(make_series("converged", K, t.numbers("converged_fraction"), SeriesStyle::line_markers));
  PlotPanel b;
  b.x_label = "K";
  b.y_label = "class_error of converged runs";
  auto m = t.numbers("class_error_mean"), s = t.numbers("class_error_std");
  PlotSeries sm = make_series("mean", K, m, SeriesStyle::line_markers);
  for (std::size_t i = 0; i < m.size(); ++i) {
    sm.lo.push_back(m[i] - s[i]);
    sm.hi.push_back(m[i] + s[i]);
  }
  b.series.push_back(std::move(sm));
  f.panels.push_back(std::move(a));
  f.panels.push_back(std::move(b));
  return f;
}

}  // namespace detail

// Figure for the CSV of an experiment kind. Throws schema_error when a
// column the figure needs is missing.
inline PlotFigure make_figure(const std::string& kind, const CsvTable& t, const std::string& title = {}) {
  const std::string ttl = title.empty() ? kind : title;
  if (kind == "ode_run") {
    detail::require_columns(t, {"t", "pmse", "class_error"});
    return detail::plot_trajectory(t, ttl);
  }
  if (kind == "sgd_2lnn" || kind == "sgd_rf") {
    detail::require_columns(t, {"step", "t", "pmse", "class_error"});
    return detail::plot_trajectory(t, ttl);
  }
  if (kind == "fixed_point_sweep") return detail::plot_fixed_point(t, ttl);
  if (kind == "rf_asymptotics_sweep") {
    detail::require_columns(t, {"pmse_analytic"});
    return detail::plot_rf_sweep(t, ttl, "sigma");
  }
  if (kind == "master_curve") return detail::plot_rf_sweep(t, ttl, "scaling_var");
  if (kind == "snr_comparison") return detail::plot_snr(t, ttl);
  if (kind == "overparam_sweep") return detail::plot_overparam(t, ttl);
  throw validation_error("no figure for kind '" + kind + "'");
}

inline std::string emit_plot(const std::string& kind, const CsvTable& t, const std::string& title = {}) {
  return render_svg(make_figure(kind, t, title));
}

// ----------------------------------------------------------------- running

namespace detail {

inline std::string fmt(double x) { return format_double(x); }
inline std::string fmt(long long x) { return format_int(x); }
inline std::string fmt(int x) { return format_int(x); }

inline MixtureSpec build_checked(const MixtureConfig& m, int dim, double sigma, std::uint64_t seed) {
  MixtureSpec spec = m.build(dim, sigma, seed);
  if (spec.dim != dim)
    throw validation_error("mixture dimension " + std::to_string(spec.dim) + " does not match D = " +
                           std::to_string(dim));
  return spec;
}

inline std::vector<double> observation_times(double t_max, double dt, int n, bool log_spaced) {
  std::vector<double> out{0.0};
  double lo = std::max(dt, t_max * 1e-3);
  for (int i = 0; i < n; ++i) {
    double f = n == 1 ? 1.0 : static_cast<double>(i) / (n - 1);
    double t = log_spaced ? lo * std::pow(t_max / lo, f) : t_max * std::max(f, 1.0 / n);
    t = std::round(t / dt) * dt;
    if (t > out.back() + 0.5 * dt) out.push_back(t);
  }
  if (out.back() < t_max - 0.5 * dt) out.push_back(std::round(t_max / dt) * dt);
  return out;
}

inline CsvTable trajectory_table(const std::vector<SimPoint>& pts) {
  CsvTable t({"step", "t", "pmse", "class_error"});
  for (const auto& p : pts) t.add_row({fmt(p.step), fmt(p.t), fmt(p.pmse), fmt(p.class_error)});
  return t;
}

inline void run_ode(const ExperimentConfig& c, RunOutput& out) {
  const auto& p = c.ode;
  MixtureSpec spec = build_checked(*c.mixture, p.D, p.sigma, cell_seed(c.seed, "mixture"));
  Rng init_rng(cell_seed(c.seed, "init"));
  TwoLayerNet net = TwoLayerNet::random(p.K, p.D, p.sigma0, c.activation, init_rng);
  OrderParameterState start = state_from_weights(spec, net.W, net.v);

  OdeConfig oc;
  oc.lr = p.lr;
  oc.weight_decay = p.weight_decay;
  oc.activation = c.activation;
  oc.dt = p.dt;
  oc.mc_samples = static_cast<std::size_t>(p.mc_samples);
  oc.seed = cell_seed(c.seed, "ode");
  ObserverSchedule sch;
  sch.times = observation_times(p.t_max, p.dt, p.n_obs, p.log_times);
  sch.keep_snapshots = p.order_parameters;
  OdeTrajectory traj = integrate(start, spec, oc, sch.times.back(), sch);

  std::map<long long, SimPoint> sim;
  if (p.compare_sgd) {
    TrainConfig tc;
    tc.lr = p.lr;
    tc.weight_decay = p.weight_decay;
    tc.steps = std::llround(sch.times.back() * p.D);
    for (double t : sch.times) tc.eval_steps.push_back(std::llround(t * p.D));
    tc.eval_set_size = p.eval_set_size;
    tc.seed = cell_seed(c.seed, "sgd");
    for (const auto& sp : train_2lnn(net, spec, tc)) sim[sp.step] = sp;
  }

  std::vector<std::string> header{"t", "pmse", "class_error"};
  if (p.compare_sgd) {
    header.push_back("pmse_sgd");
    header.push_back("class_error_sgd");
  }
  const int n_clusters = spec.n_clusters(), K = p.K;
  if (p.order_parameters) {
    for (int a = 0; a < n_clusters; ++a)
      for (int k = 0; k < K; ++k) header.push_back("M_" + std::to_string(a) + "_" + std::to_string(k));
    for (int k = 0; k < K; ++k)
      for (int l = k; l < K; ++l) header.push_back("Q_" + std::to_string(k) + "_" + std::to_string(l));
    for (int k = 0; k < K; ++k) header.push_back("v_" + std::to_string(k));
  }
  CsvTable t(header);
  for (const auto& pt : traj.points) {
    std::vector<std::string> row{fmt(pt.t), fmt(pt.pmse), fmt(pt.class_error)};
    if (p.compare_sgd) {
      auto it = sim.find(std::llround(pt.t * p.D));
      row.push_back(it == sim.end() ? "nan" : fmt(it->second.pmse));
      row.push_back(it == sim.end() ? "nan" : fmt(it->second.class_error));
    }
    if (p.order_parameters) {
      Eigen::MatrixXd M = pt.snapshot->M(), Q = pt.snapshot->Q();
      for (int a = 0; a < n_clusters; ++a)
        for (int k = 0; k < K; ++k) row.push_back(fmt(M(a, k)));
      for (int k = 0; k < K; ++k)
        for (int l = k; l < K; ++l) row.push_back(fmt(Q(k, l)));
      for (int k = 0; k < K; ++k) row.push_back(fmt(pt.snapshot->v[k]));
    }
    t.add_row(std::move(row));
  }
  out.results = std::move(t);
}

inline void run_sgd(const ExperimentConfig& c, RunOutput& out) {
  const auto& p = c.sgd;
  MixtureSpec spec = build_checked(*c.mixture, p.D, p.sigma, cell_seed(c.seed, "mixture"));
  Rng init_rng(cell_seed(c.seed, "init"));
  TrainConfig tc;
  tc.lr = p.lr;
  tc.weight_decay = p.weight_decay;
  tc.steps = p.steps;
  tc.eval_every = p.eval_every;
  tc.eval_set_size = p.eval_set_size;
  tc.seed = cell_seed(c.seed, "sgd");
  if (c.kind == "sgd_2lnn") {
    TwoLayerNet net = TwoLayerNet::random(p.K, p.D, p.sigma0, c.activation, init_rng);
    out.results = trajectory_table(train_2lnn(net, spec, tc));
  } else {
    RfModel model = RfModel::random(p.P, p.D, init_rng, c.activation);
    out.results = trajectory_table(train_rf(model, spec, tc));
  }
}

inline void record_failure(RunOutput& out, const std::string& cell, const CellOutcome& o) {
  if (!o.ok) out.failures.push_back(cell + ": " + o.message);
}

inline void run_fixed_point(const ExperimentConfig& c, RunOutput& out, int jobs) {
  const auto& p = c.fixed_point;
  struct Cell {
    double kappa;
    int rep;
    std::string coords;
    FixedPointResult res;
  };
  std::vector<Cell> cells;
  for (double k : p.kappa)
    for (int r = 0; r < p.replicates; ++r)
      cells.push_back({k, r, "kappa=" + fmt(k) + ";rep=" + std::to_string(r), {}});
  auto outcomes = run_cells(cells.size(), jobs, [&](std::size_t i) {
    FixedPointOptions opt;
    opt.activation = c.activation;
    opt.v_rule = p.v_rule == "stationary" ? SecondLayerRule::stationary : SecondLayerRule::output_constraint;
    opt.n_angles = p.n_angles;
    opt.tol = p.tol;
    opt.seed = cell_seed(c.seed, cells[i].coords);
    cells[i].res = solve_xor_fixed_point(p.K, p.sigma, p.lr, cells[i].kappa, opt);
  });
  CsvTable t({"kappa", "pmse", "class_error", "residual", "converged"});
  for (std::size_t i = 0; i < cells.size(); ++i) {
    record_failure(out, cells[i].coords, outcomes[i]);
    const auto& r = cells[i].res;
    if (outcomes[i].ok)
      t.add_row({fmt(cells[i].kappa), fmt(r.pmse), fmt(r.class_error), fmt(r.residual_norm), r.converged ? "1" : "0"});
    else
      t.add_row({fmt(cells[i].kappa), "nan", "nan", "nan", "0"});
  }
  out.n_cells = cells.size();
  out.results = std::move(t);
}

struct RfCellResult {
  int P = 0;
  double sigma = 0.0;
  double pmse = std::nan("");
  double class_error = std::nan("");
  double class_error_sim = std::nan("");
};

inline RfCellResult rf_cell(const ExperimentConfig& c, int D, double gamma, double sigma, std::uint64_t seed) {
  const auto& p = c.rf;
  RfCellResult res;
  res.P = static_cast<int>(std::llround(gamma * D));
  res.sigma = sigma;
  if (res.P < 1) throw domain_error("gamma * D gives P < 1");
  MixtureSpec spec = build_checked(*c.mixture, D, sigma, cell_seed(seed, "mixture"));
  Rng rng(cell_seed(seed, "features"));
  RfModel model = RfModel::random(res.P, D, rng, c.activation);
  ReluMomentOptions mo;
  if (p.offdiagonal == "exact") mo.offdiagonal = OffDiagonal::exact;
  else if (p.offdiagonal == "mean_field") mo.offdiagonal = OffDiagonal::mean_field;
  else if (p.offdiagonal == "first_order") mo.offdiagonal = OffDiagonal::first_order;
  AsymptoticOptions ao;
  ao.centering = p.centering == "none" ? Centering::none : Centering::mixture_mean;
  {
    FeatureMoments fm = relu_moments(spec, p.simulate ? Eigen::MatrixXd(model.F) : std::move(model.F), mo);
    RfAsymptotics asym = rf_asymptotics(fm, spec, ao);
    res.pmse = 2.0 * asym.pmse_inf;  // full mean squared error, like the other tables
    res.class_error = asym.class_error_inf;
  }
  if (p.simulate) {
    TrainConfig tc;
    tc.lr = p.simulate->lr;
    tc.steps = p.simulate->steps;
    tc.eval_set_size = p.simulate->eval_set_size;
    tc.seed = cell_seed(seed, "sgd");
    long long tail = std::llround(p.simulate->average_tail * static_cast<double>(tc.steps));
    if (tail > 0) tc.average_from = tc.steps - tail;
    auto pts = train_rf(model, spec, tc);
    res.class_error_sim = pts.back().class_error;
  }
  return res;
}

inline void run_rf_sweep(const ExperimentConfig& c, RunOutput& out, int jobs) {
  const auto& p = c.rf;
  const bool master = c.kind == "master_curve";
  const bool by_scaling = !p.scaling_var.empty();
  struct Cell {
    int D;
    double gamma;
    double axis;  // sigma or scaling_var
    std::string coords;
    RfCellResult res;
  };
  std::vector<Cell> cells;
  const auto& axis = by_scaling ? p.scaling_var : p.sigma;
  for (double D : p.D)
    for (double g : p.gamma)
      for (double a : axis)
        cells.push_back({static_cast<int>(D), g, a,
                         "D=" + fmt(D) + ";gamma=" + fmt(g) + (by_scaling ? ";scaling_var=" : ";sigma=") + fmt(a), {}});
  auto outcomes = run_cells(cells.size(), jobs, [&](std::size_t i) {
    auto& cell = cells[i];
    double sigma = cell.axis;
    if (by_scaling) sigma = cell.axis * std::pow(cell.gamma * cell.D, 0.25) / std::sqrt(double(cell.D));
    cell.res = rf_cell(c, cell.D, cell.gamma, sigma, cell_seed(c.seed, cell.coords));
  });
  std::vector<std::string> header{"sigma", "D", "P", "gamma"};
  if (master) header.push_back("scaling_var");
  else header.push_back("pmse_analytic");
  header.push_back("class_error_analytic");
  if (p.simulate) header.push_back("class_error_sim");
  CsvTable t(header);
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const auto& cell = cells[i];
    record_failure(out, cell.coords, outcomes[i]);
    int P = static_cast<int>(std::llround(cell.gamma * cell.D));
    double sigma = by_scaling ? cell.axis * std::pow(double(P), 0.25) / std::sqrt(double(cell.D)) : cell.axis;
    std::vector<std::string> row{fmt(sigma), fmt(cell.D), fmt(P), fmt(cell.gamma)};
    if (master) row.push_back(fmt(sigma * std::sqrt(double(cell.D)) / std::pow(double(P), 0.25)));
    else row.push_back(fmt(cell.res.pmse));
    row.push_back(fmt(cell.res.class_error));
    if (p.simulate) row.push_back(fmt(cell.res.class_error_sim));
    t.add_row(std::move(row));
  }
  out.n_cells = cells.size();
  out.results = std::move(t);
}

inline void run_snr_analytic(const ExperimentConfig& c, RunOutput& out, int jobs) {
  const auto& p = c.snr;
  // Two cells per snr value: the 2LNN fixed point and the RF asymptotics.
  struct Cell {
    double snr;
    bool rf;
    std::string coords;
    double value = std::nan("");
  };
  std::vector<Cell> cells;
  for (double s : p.snr) {
    cells.push_back({s, false, "snr=" + fmt(s) + ";model=2lnn"});
    cells.push_back({s, true, "snr=" + fmt(s) + ";model=rf"});
  }
  MixtureConfig xor_unit;
  xor_unit.builder = "xor";
  xor_unit.mu = {1.0, DimExpr::Unit::sqrtD};
  auto outcomes = run_cells(cells.size(), jobs, [&](std::size_t i) {
    auto& cell = cells[i];
    const double sigma = 1.0 / cell.snr;
    const std::uint64_t seed = cell_seed(c.seed, cell.coords);
    if (!cell.rf) {
      FixedPointOptions opt;
      opt.seed = seed;
      FixedPointResult r = solve_xor_fixed_point(p.K, sigma, p.lr, p.weight_decay, opt);
      if (!r.converged) throw numerical_error("fixed point did not converge (residual " + fmt(r.residual_norm) + ")");
      cell.value = r.class_error;
    } else {
      MixtureSpec spec = xor_unit.build(p.rf_D, sigma, seed);
      const int P = static_cast<int>(std::llround(p.rf_gamma * p.rf_D));
      Rng rng(cell_seed(seed, "features"));
      Eigen::MatrixXd F = rng.normal_matrix(P, p.rf_D);
      FeatureMoments fm = relu_moments(spec, std::move(F));
      cell.value = rf_asymptotics(fm, spec).class_error_inf;
    }
  });
  CsvTable t({"snr", "sigma", "oracle", "class_error_2lnn", "class_error_rf"});
  for (std::size_t i = 0; i < cells.size(); i += 2) {
    record_failure(out, cells[i].coords, outcomes[i]);
    record_failure(out, cells[i + 1].coords, outcomes[i + 1]);
    double sigma = 1.0 / cells[i].snr;
    t.add_row({fmt(cells[i].snr), fmt(sigma), fmt(oracle_error(1.0, sigma)), fmt(cells[i].value),
               fmt(cells[i + 1].value)});
  }
  out.n_cells = cells.size();
  out.results = std::move(t);
}

inline void run_snr_simulation(const ExperimentConfig& c, RunOutput& out, int jobs) {
  const auto& p = c.snr;
  struct Cell {
    std::size_t regime;
    bool rf;
    std::string coords;
    std::vector<SimPoint> pts;
  };
  std::vector<Cell> cells;
  for (std::size_t r = 0; r < p.regimes.size(); ++r) {
    cells.push_back({r, false, "regime=" + p.regimes[r].name + ";model=2lnn", {}});
    cells.push_back({r, true, "regime=" + p.regimes[r].name + ";model=rf", {}});
  }
  auto outcomes = run_cells(cells.size(), jobs, [&](std::size_t i) {
    auto& cell = cells[i];
    const std::uint64_t seed = cell_seed(c.seed, cell.coords);
    MixtureSpec spec = build_checked(p.regimes[cell.regime].mixture, p.D, p.sigma,
                                     cell_seed(c.seed, "regime=" + p.regimes[cell.regime].name));
    TrainConfig tc;
    tc.lr = p.lr;
    tc.weight_decay = p.weight_decay;
    tc.steps = p.steps;
    tc.eval_every = p.eval_every;
    tc.eval_set_size = p.eval_set_size;
    tc.seed = cell_seed(seed, "sgd");
    Rng rng(cell_seed(seed, "init"));
    if (cell.rf) {
      RfModel model = RfModel::random(static_cast<int>(std::llround(p.gamma * p.D)), p.D, rng, c.activation);
      cell.pts = train_rf(model, spec, tc);
    } else {
      TwoLayerNet net = TwoLayerNet::random(p.K, p.D, p.sigma0, c.activation, rng);
      cell.pts = train_2lnn(net, spec, tc);
    }
  });
  CsvTable t({"regime", "model", "step", "t", "pmse", "class_error"});
  for (std::size_t i = 0; i < cells.size(); ++i) {
    record_failure(out, cells[i].coords, outcomes[i]);
    for (const auto& sp : cells[i].pts)
      t.add_row({p.regimes[cells[i].regime].name, cells[i].rf ? "rf" : "2lnn", fmt(sp.step), fmt(sp.t), fmt(sp.pmse),
                 fmt(sp.class_error)});
  }
  out.n_cells = cells.size();
  out.results = std::move(t);
}

inline void run_overparam(const ExperimentConfig& c, RunOutput& out, int jobs) {
  const auto& p = c.overparam;
  struct Cell {
    int K;
    int rep;
    std::string coords;
    ErrorEstimate final;
  };
  std::vector<Cell> cells;
  for (long long K : p.K)
    for (int r = 0; r < p.replicates; ++r)
      cells.push_back({static_cast<int>(K), r, "K=" + std::to_string(K) + ";rep=" + std::to_string(r), {}});
  MixtureSpec spec = build_checked(*c.mixture, p.D, p.sigma, cell_seed(c.seed, "mixture"));
  const double threshold = p.threshold_factor * oracle_error(1.0, p.sigma);
  auto outcomes = run_cells(cells.size(), jobs, [&](std::size_t i) {
    auto& cell = cells[i];
    const std::uint64_t seed = cell_seed(c.seed, cell.coords);
    Rng rng(cell_seed(seed, "init"));
    TwoLayerNet net = TwoLayerNet::random(cell.K, p.D, p.sigma0, c.activation, rng);
    TrainConfig tc;
    tc.lr = p.lr;
    tc.weight_decay = p.weight_decay;
    tc.steps = p.steps;
    tc.eval_set_size = p.eval_set_size;
    tc.seed = cell_seed(seed, "sgd");
    auto pts = train_2lnn(net, spec, tc);
    cell.final = {pts.back().pmse, pts.back().class_error};
  });
  CsvTable runs({"K", "replicate", "pmse", "class_error", "converged"});
  CsvTable agg({"K", "n_runs", "n_failed", "converged_fraction", "class_error_mean", "class_error_std"});
  std::size_t i = 0;
  for (long long K : p.K) {
    int n_failed = 0, n_conv = 0;
    double s = 0.0, s2 = 0.0;
    for (int r = 0; r < p.replicates; ++r, ++i) {
      record_failure(out, cells[i].coords, outcomes[i]);
      if (!outcomes[i].ok) {
        ++n_failed;
        runs.add_row({fmt(K), fmt(r), "nan", "nan", "0"});
        continue;
      }
      double ec = cells[i].final.class_error;
      bool conv = ec <= threshold;
      if (conv) {
        ++n_conv;
        s += ec;
        s2 += ec * ec;
      }
      runs.add_row({fmt(K), fmt(r), fmt(cells[i].final.pmse), fmt(ec), conv ? "1" : "0"});
    }
    int n_ok = p.replicates - n_failed;
    double mean = n_conv > 0 ? s / n_conv : std::nan("");
    double sd = n_conv > 1 ? std::sqrt(std::max(0.0, (s2 - n_conv * mean * mean) / (n_conv - 1))) : std::nan("");
    if (n_conv == 1) sd = 0.0;
    agg.add_row({fmt(K), fmt(p.replicates), fmt(n_failed),
                 n_ok > 0 ? fmt(static_cast<double>(n_conv) / n_ok) : "nan", fmt(mean), fmt(sd)});
  }
  out.n_cells = cells.size();
  out.results = std::move(agg);
  out.runs = std::move(runs);
}

}  // namespace detail

inline RunOutput run_experiment(const ExperimentConfig& c, const RunOptions& opt = {}) {
  RunOutput out;
  out.jobs = resolve_jobs(opt.jobs);
  auto t0 = std::chrono::steady_clock::now();
  auto single = [&](auto&& fn) {
    out.n_cells = 1;
    try {
      fn();
    } catch (const validation_error&) {
      throw;
    } catch (const std::exception& e) {
      out.failures.push_back(std::string("run: ") + e.what());
    }
  };
  if (c.kind == "ode_run") single([&] { detail::run_ode(c, out); });
  else if (c.kind == "sgd_2lnn" || c.kind == "sgd_rf") single([&] { detail::run_sgd(c, out); });
  else if (c.kind == "fixed_point_sweep") detail::run_fixed_point(c, out, out.jobs);
  else if (c.kind == "rf_asymptotics_sweep" || c.kind == "master_curve") detail::run_rf_sweep(c, out, out.jobs);
  else if (c.kind == "snr_comparison" && c.snr.method == "analytic") detail::run_snr_analytic(c, out, out.jobs);
  else if (c.kind == "snr_comparison") detail::run_snr_simulation(c, out, out.jobs);
  else if (c.kind == "overparam_sweep") detail::run_overparam(c, out, out.jobs);
  else throw validation_error("unknown kind '" + c.kind + "'");
  if (out.results.header().empty()) out.results = CsvTable({"status"});
  out.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (out.results.header() != std::vector<std::string>{"status"}) out.figure = make_figure(c.kind, out.results, c.name);
  return out;
}

inline std::string csv_header_comment(const ExperimentConfig& c) {
  return std::string("gmix ") + gmix_version + " config_hash=" + c.hash_hex();
}

// results.csv, runs.csv (replicate sweeps), config.lock.json, plot.svg and
// run_record.json in dir.
inline std::vector<std::string> write_artifacts(const std::string& dir, const ExperimentConfig& c, const RunOutput& out) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::vector<std::string> files;
  auto path = [&](const std::string& name) {
    files.push_back(name);
    return (fs::path(dir) / name).string();
  };
  const std::string comment = csv_header_comment(c);
  out.results.save(path("results.csv"), comment);
  if (out.runs) out.runs->save(path("runs.csv"), comment);
  {
    std::ofstream f(path("config.lock.json"), std::ios::binary);
    f << c.resolved().dump(2) << '\n';
  }
  if (!out.figure.panels.empty()) {
    std::ofstream f(path("plot.svg"), std::ios::binary);
    f << render_svg(out.figure);
  }
  json rec;
  rec["gmix_version"] = gmix_version;
  rec["kind"] = c.kind;
  rec["name"] = c.name;
  rec["config_hash"] = c.hash_hex();
  rec["seed"] = c.seed;
  rec["cells"] = out.n_cells;
  rec["failed_cells"] = out.failures.size();
  rec["failures"] = out.failures;
  rec["rows"] = out.results.size();
  rec["jobs"] = out.jobs;
  rec["wall_time_seconds"] = out.wall_seconds;
  files.push_back("run_record.json");
  rec["files"] = files;
  std::ofstream f((fs::path(dir) / "run_record.json").string(), std::ios::binary);
  f << rec.dump(2) << '\n';
  return files;
}

}  // namespace gmix
