#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include "pfadapt/sim.hpp"

using namespace pfadapt;

namespace {

struct Options {
  std::string config;
  std::string preset = "paper";
  std::string out;
  int vtk_every = -1;
  bool serial = false;
};

Config prepare(const Options& o) {
  Config cfg = load_config(o.config);
  apply_preset(cfg, o.preset);
  if (!o.out.empty()) cfg.out_dir = o.out;
  if (o.vtk_every >= 0) cfg.vtk_every = o.vtk_every;
  return cfg;
}

int cmd_run(const Options& o) {
  const Config cfg = prepare(o);
  const Exec exec = o.serial ? Exec::serial : Exec::parallel;
  std::printf("%-6s %9s %9s %13s %13s %13s\n", "stage", "nodes", "dofs", "max eta_phi", "max eta_u", "peak load");
  RunOptions opts;
  opts.exec = exec;
  const auto stage_dir = [&](int k) {
    return cfg.stages == 0 ? std::filesystem::path(cfg.out_dir)
                           : std::filesystem::path(cfg.out_dir) / ("stage_" + std::to_string(k));
  };
  int current_stage = 0;
  if (cfg.vtk_every > 0) {
    opts.on_step = [&](const StepRecord& rec, const StepState& st) {
      if (rec.n % cfg.vtk_every != 0) return;
      char name[32];
      std::snprintf(name, sizeof name, "step_%05d.vtk", rec.n);
      write_vtk((stage_dir(current_stage) / name).string(), st);
    };
  }
  adaptive_loop(cfg, opts, [&](const Stage& st) {
    const auto dir = stage_dir(st.index);
    write_quantities_csv((dir / "quantities.csv").string(), st.run.steps);
    write_estimator_csv((dir / "estimator.csv").string(), st.run.steps);
    double eta_phi = 0.0, eta_u = 0.0, load = 0.0;
    for (const auto& s : st.run.steps) {
      eta_phi = std::max(eta_phi, s.eta_phi);
      eta_u = std::max(eta_u, s.eta_u);
      load = std::max(load, s.q.load);
    }
    const int nodes = st.run.mesh->n_masters();
    std::printf("%-6d %9d %9d %13.6e %13.6e %13.6e\n", st.index, nodes, 3 * nodes, eta_phi, eta_u, load);
    std::fflush(stdout);
    current_stage = st.index + 1;
  });
  std::printf("results written to %s\n", cfg.out_dir.c_str());
  return 0;
}

int cmd_study(const std::string& kind, const Options& o) {
  const Config cfg = prepare(o);
  const Exec exec = o.serial ? Exec::serial : Exec::parallel;
  const std::filesystem::path dir(cfg.out_dir);
  if (kind == "convergence") {
    const auto rows = convergence_study(cfg, exec);
    write_convergence_csv((dir / "convergence.csv").string(), rows);
    std::printf("%-9s %6s %9s %14s %14s\n", "series", "stage", "nodes", "err_phi_eps", "err_u_energy");
    for (const auto& r : rows)
      std::printf("%-9s %6d %9d %14.6e %14.6e\n", r.series.c_str(), r.stage, r.nodes, r.err_phi_eps, r.err_u_energy);
  } else {
    const auto rows = efficiency_study(cfg, exec);
    write_efficiency_csv((dir / "efficiency.csv").string(), rows);
    std::printf("%-8s %6s %9s %14s %14s\n", "eps", "stage", "nodes", "index_robust", "index_std");
    for (const auto& r : rows)
      std::printf("%-8g %6d %9d %14.6e %14.6e\n", r.eps, r.stage, r.nodes, r.index_robust, r.index_std);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adaptive phase-field fracture with robust a posteriori error estimation"};
  app.require_subcommand(1);
  app.fallthrough();
  Options o;
  app.add_option("--preset", o.preset, "step-count scaling: desk (tau x5, steps / 5) or paper")
      ->check(CLI::IsMember({"desk", "paper"}));
  app.add_option("--out", o.out, "output directory (overrides out_dir)");
  app.add_option("--vtk-every", o.vtk_every, "write VTK every k steps (0 disables)")->check(CLI::NonNegativeNumber);
  app.add_flag("--serial", o.serial, "use the serial reference kernels");

  auto* run = app.add_subcommand("run", "run a benchmark timeline or adaptive loop");
  run->add_option("config", o.config, "configuration file")->required();

  std::string kind;
  auto* study = app.add_subcommand("study", "convergence or efficiency study");
  study->add_option("kind", kind, "convergence | efficiency")
      ->required()
      ->check(CLI::IsMember({"convergence", "efficiency"}));
  study->add_option("config", o.config, "configuration file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*run) return cmd_run(o);
    return cmd_study(kind, o);
  } catch (const InputError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return 2;
  } catch (const std::filesystem::filesystem_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return 2;
  }
}
