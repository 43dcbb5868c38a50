#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "gmix/experiment/recipes.hpp"
#include "gmix/experiment/runner.hpp"

namespace fs = std::filesystem;

namespace {

gmix::ExperimentConfig load_target(const std::string& target) {
  if (fs::exists(target)) return gmix::load_config(target);
  if (gmix::find_recipe(target)) return gmix::recipe_config(target);
  throw gmix::validation_error("'" + target + "' is neither a config file nor a built-in recipe (see `gmix recipes`)");
}

int cmd_run(const std::string& target, std::optional<std::string> out_dir, int jobs, std::optional<std::uint64_t> seed) {
  gmix::ExperimentConfig cfg = load_target(target);
  if (seed) cfg.seed = *seed;
  const std::string dir = out_dir ? *out_dir : "runs/" + cfg.name;
  gmix::RunOptions opt;
  opt.jobs = jobs;
  std::cerr << "gmix: running " << cfg.kind << " '" << cfg.name << "' (config " << cfg.hash_hex() << ")\n";
  gmix::RunOutput out = gmix::run_experiment(cfg, opt);
  gmix::write_artifacts(dir, cfg, out);
  for (const auto& f : out.failures) std::cerr << "gmix: failed cell " << f << '\n';
  std::cerr << "gmix: " << out.results.size() << " rows, " << out.failures.size() << " of " << out.n_cells
            << " cells failed, " << out.wall_seconds << " s; wrote " << dir << '\n';
  return out.all_failed() ? 3 : 0;
}

int cmd_recipes(const std::optional<std::string>& show) {
  if (show) {
    const gmix::Recipe* r = gmix::find_recipe(*show);
    if (!r) throw gmix::validation_error("unknown recipe '" + *show + "'");
    std::cout << r->config << '\n';
    return 0;
  }
  for (const auto& r : gmix::builtin_recipes()) std::cout << r.name << "\t" << r.description << '\n';
  return 0;
}

int cmd_plot(const std::string& csv, const std::string& kind, const std::string& out, const std::string& title) {
  gmix::CsvTable t = gmix::CsvTable::load(csv);
  std::string svg = gmix::emit_plot(kind, t, title);
  if (t.empty()) std::cerr << "gmix: warning: " << csv << " has no data rows\n";
  if (out == "-") {
    std::cout << svg;
  } else {
    std::ofstream f(out, std::ios::binary);
    if (!f) throw gmix::error("cannot write " + out);
    f << svg;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gaussian-mixture learning experiments: ODEs, SGD, fixed points and random-feature asymptotics"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "run a config file or a built-in recipe");
  std::string target;
  std::optional<std::string> out_dir;
  int jobs = 0;
  std::optional<std::uint64_t> seed;
  run->add_option("config", target, "config JSON path or recipe name")->required();
  run->add_option("--out", out_dir, "output directory (default runs/<name>)");
  run->add_option("--jobs", jobs, "worker threads (default: GMIX_JOBS or 1)")->check(CLI::NonNegativeNumber);
  run->add_option("--seed", seed, "override the master seed");

  auto* recipes = app.add_subcommand("recipes", "list built-in figure recipes");
  std::optional<std::string> show;
  recipes->add_option("--show", show, "print the config of one recipe");

  auto* plot = app.add_subcommand("plot", "render plot.svg from a results CSV");
  std::string csv, kind, plot_out = "plot.svg", title;
  plot->add_option("csv", csv, "results CSV")->required()->check(CLI::ExistingFile);
  plot->add_option("--kind", kind, "experiment kind of the CSV")->required();
  plot->add_option("--out", plot_out, "output SVG path, - for stdout");
  plot->add_option("--title", title, "figure title");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(target, out_dir, jobs, seed);
    if (*recipes) return cmd_recipes(show);
    if (*plot) return cmd_plot(csv, kind, plot_out, title);
  } catch (const gmix::validation_error& e) {
    std::cerr << "gmix: invalid config: " << e.what() << '\n';
    return 1;
  } catch (const gmix::schema_error& e) {
    std::cerr << "gmix: schema error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "gmix: error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
