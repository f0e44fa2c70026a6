// wraploss command-line front end.
//
//   wraploss run <config.json>
//   wraploss compare <grid.json>
//   wraploss surface | gradcheck | theorem1 | datagen [options]
//
// Exit codes: 0 success, 1 validation, 2 numeric/assertion failure, 3 I/O.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "wraploss/wraploss.hpp"

namespace fs = std::filesystem;
using wraploss::json;

namespace {

struct Globals {
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  int jobs = 1;
};

fs::path out_root(const Globals& g, const std::optional<fs::path>& from_config) {
  if (!g.out_dir.empty()) return g.out_dir;
  if (from_config) return *from_config;
  return wraploss::default_out_root();
}

std::string surface_csv(const wraploss::SurfaceGrid& g) {
  std::string out = g.axis1_name + "\\" + g.axis2_name;
  for (double v : g.axis2) out += "," + wraploss::format_double(v);
  out += "\n";
  for (std::size_t i = 0; i < g.axis1.size(); ++i) {
    out += wraploss::format_double(g.axis1[i]);
    for (std::size_t j = 0; j < g.axis2.size(); ++j) {
      out += "," + wraploss::format_double(
                       g.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
    }
    out += "\n";
  }
  return out;
}

int cmd_run(const Globals& g, const std::string& config_path) {
  wraploss::ExperimentConfig cfg = wraploss::load_config(config_path);
  if (g.seed) {
    cfg.train.seed = *g.seed;
    cfg.raw["train"]["seed"] = *g.seed;
  }
  wraploss::TrainHooks hooks;
  hooks.log = [](const std::string& msg) { std::cerr << msg << "\n"; };
  const fs::path root = out_root(g, cfg.output_dir);
  const wraploss::RunSummary s = wraploss::run_experiment(cfg, root, hooks);
  std::cout << wraploss::summary_to_json(s).dump(2) << "\n";
  std::cerr << "wrote " << (root / wraploss::sanitize_label(cfg.label)).string() << "\n";
  return 0;
}

int cmd_compare(const Globals& g, const std::string& grid_path) {
  const json j = wraploss::load_json(grid_path);
  const wraploss::GridConfig grid =
      wraploss::parse_grid(j, fs::path(grid_path).parent_path(), g.seed);
  const fs::path root = out_root(g, grid.output_dir);
  const wraploss::ComparisonReport rep = wraploss::compare(grid, root, g.jobs);
  std::cout << wraploss::report_csv(rep);
  for (const auto& r : rep.runs) {
    if (!r.ok) {
      std::cerr << "run " << r.label << " failed: " << r.error << "\n";
    }
  }
  std::cerr << "wrote " << (root / wraploss::sanitize_label(grid.label)).string() << "\n";
  for (const auto& r : rep.runs) {
    if (!r.ok) return wraploss::exit_code_for(r.error_kind);
  }
  return 0;
}

struct SurfaceArgs {
  std::string kind = "wrap";
  double o_min = 0.0005, o_max = 3.0, o_step = 0.0005;
  double p_min = 0.0, p_max = 20.0, p_step = 1.0;
  double dof_min = 1.0, dof_max = 1000.0, dof_step = 10.0;
  double c_min = 1.0, c_max = 20.0, c_step = 1.0;
  std::string out;
};

int cmd_surface(const Globals& g, const SurfaceArgs& a) {
  wraploss::SurfaceGrid grid;
  if (a.kind == "wrap") {
    grid = wraploss::wrap_error_surface(wraploss::decimal_grid(a.o_min, a.o_max, a.o_step),
                                        wraploss::decimal_grid(a.p_min, a.p_max, a.p_step));
  } else if (a.kind == "dof") {
    grid = wraploss::expected_wrap_surface(
        wraploss::decimal_grid(a.dof_min, a.dof_max, a.dof_step),
        wraploss::decimal_grid(a.c_min, a.c_max, a.c_step));
  } else {
    throw wraploss::Error(wraploss::ErrorKind::kConfig, "unknown surface kind " + a.kind);
  }
  const fs::path path =
      a.out.empty() ? out_root(g, std::nullopt) / ("surface_" + a.kind + ".csv") : fs::path(a.out);
  wraploss::write_file_atomic(path, surface_csv(grid));
  std::cerr << "wrote " << path.string() << " (" << grid.axis1.size() << " x "
            << grid.axis2.size() << ")\n";
  return 0;
}

int cmd_gradcheck(const Globals& g, int instances, double tol) {
  const wraploss::GradCheckReport rep =
      wraploss::run_gradcheck(instances, g.seed.value_or(1));
  json j{{"instances", rep.instances},
         {"step", rep.step},
         {"tolerance", tol},
         {"max_rel_error", rep.max_rel_error},
         {"pass", rep.worst() <= tol}};
  const fs::path path = out_root(g, std::nullopt) / "gradcheck.json";
  wraploss::write_file_atomic(path, j.dump(2) + "\n");
  std::cout << j.dump(2) << "\n";
  return rep.worst() <= tol ? 0 : 2;
}

struct Theorem1Args {
  int c = 2;
  double L = 4.0;
  std::optional<double> delta;
  long trials = 100000;
  double slack = 1.05;
};

int cmd_theorem1(const Globals& g, const Theorem1Args& a) {
  const double delta = a.delta.value_or(
      a.c >= 1 && a.L > 1.0 ? wraploss::theorem1_delta_max(a.c, a.L) : 0.0);
  const wraploss::Theorem1Report r =
      wraploss::check_theorem1(a.c, a.L, delta, a.trials, g.seed.value_or(1), a.slack);
  json j{{"c", r.c},
         {"L", r.L},
         {"delta", r.delta},
         {"trials", r.trials},
         {"max_observed", r.max_observed},
         {"bound", r.bound},
         {"slack", r.slack},
         {"pass", r.pass}};
  std::cout << j.dump(2) << "\n";
  if (!g.out_dir.empty()) {
    wraploss::write_file_atomic(fs::path(g.out_dir) / "theorem1.json", j.dump(2) + "\n");
  }
  return r.pass ? 0 : 2;
}

int cmd_datagen(const Globals& g, const std::string& spec_path) {
  // A run config (or just its `data` object) selects the generator.
  json j = wraploss::load_json(spec_path);
  if (!j.contains("data")) j = json{{"data", j}};
  if (!j.contains("task")) {
    j["task"] = j["data"].contains("synthetic_classification") ? "classification" : "regression";
  }
  if (g.seed) {
    for (const char* key : {"synthetic_regression", "synthetic_classification"}) {
      if (j["data"].contains(key)) j["data"][key]["seed"] = *g.seed;
    }
  }
  json cfg_json{{"task", j["task"]}, {"data", j["data"]}};
  wraploss::ExperimentConfig cfg =
      wraploss::parse_config(cfg_json, fs::path(spec_path).parent_path());
  cfg.standardize = false;
  const wraploss::LoadedData data = wraploss::load_data(cfg);
  const fs::path root = out_root(g, std::nullopt);
  wraploss::write_csv_dataset(root / "train.csv", data.split.train);
  wraploss::write_csv_dataset(root / "test.csv", data.split.test);
  std::cerr << "wrote " << (root / "train.csv").string() << " ("
            << data.split.train.size() << " rows) and " << (root / "test.csv").string()
            << " (" << data.split.test.size() << " rows)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"wraploss: wrapped-loss training, verification and experiments"};
  app.require_subcommand(1);
  Globals g;
  std::uint64_t seed = 0;
  auto* seed_opt = app.add_option("--seed", seed, "Override the seed")->group("Global");
  app.add_option("--out-dir", g.out_dir, "Output root (default $WRAPLOSS_OUT or ./wraploss_out)")
      ->group("Global");
  app.add_option("--jobs", g.jobs, "Concurrent runs for compare")
      ->check(CLI::PositiveNumber)
      ->group("Global");

  std::string config_path;
  auto* run = app.add_subcommand("run", "Train one experiment config");
  run->add_option("config", config_path, "Experiment config JSON")->required();
  run->fallthrough();

  std::string grid_path;
  auto* cmp = app.add_subcommand("compare", "Run a comparison grid");
  cmp->add_option("grid", grid_path, "Grid config JSON")->required();
  cmp->fallthrough();

  SurfaceArgs sa;
  auto* surf = app.add_subcommand("surface", "Emit a WrapErr or expected-wrap-loss grid as CSV");
  surf->add_option("--kind", sa.kind, "wrap (o x P) or dof (DoF x c)")
      ->check(CLI::IsMember({"wrap", "dof"}));
  surf->add_option("--o-min", sa.o_min);
  surf->add_option("--o-max", sa.o_max);
  surf->add_option("--o-step", sa.o_step);
  surf->add_option("--p-min", sa.p_min);
  surf->add_option("--p-max", sa.p_max);
  surf->add_option("--p-step", sa.p_step);
  surf->add_option("--dof-min", sa.dof_min);
  surf->add_option("--dof-max", sa.dof_max);
  surf->add_option("--dof-step", sa.dof_step);
  surf->add_option("--c-min", sa.c_min);
  surf->add_option("--c-max", sa.c_max);
  surf->add_option("--c-step", sa.c_step);
  surf->add_option("--out", sa.out, "Output CSV path");
  surf->fallthrough();

  int instances = 100;
  double tol = 1e-6;
  auto* gc = app.add_subcommand("gradcheck", "Compare analytic gradients with finite differences");
  gc->add_option("--instances", instances)->check(CLI::PositiveNumber);
  gc->add_option("--tol", tol);
  gc->fallthrough();

  Theorem1Args ta;
  double delta = 0.0;
  auto* t1 = app.add_subcommand("theorem1", "Monte-Carlo check of the near-one approximation bound");
  t1->add_option("--c", ta.c);
  t1->add_option("--L", ta.L);
  auto* delta_opt = t1->add_option("--delta", delta, "Default: the largest admissible delta");
  t1->add_option("--trials", ta.trials);
  t1->add_option("--slack", ta.slack);
  t1->fallthrough();

  std::string spec_path;
  auto* dg = app.add_subcommand("datagen", "Write a synthetic dataset as train.csv/test.csv");
  dg->add_option("spec", spec_path, "Config JSON (or its data section)")->required();
  dg->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }
  if (seed_opt->count() > 0) g.seed = seed;
  if (delta_opt->count() > 0) ta.delta = delta;

  try {
    if (run->parsed()) return cmd_run(g, config_path);
    if (cmp->parsed()) return cmd_compare(g, grid_path);
    if (surf->parsed()) return cmd_surface(g, sa);
    if (gc->parsed()) return cmd_gradcheck(g, instances, tol);
    if (t1->parsed()) return cmd_theorem1(g, ta);
    if (dg->parsed()) return cmd_datagen(g, spec_path);
  } catch (const wraploss::Error& e) {
    std::cerr << e.what() << "\n";
    return wraploss::exit_code_for(e.kind());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
