#pragma once

#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pfadapt/elasticity.hpp"
#include "pfadapt/phasefield.hpp"

namespace pfadapt {

enum class Benchmark { tension, shear, lshape };
Benchmark parse_benchmark(std::string_view name);
std::string_view to_string(Benchmark b);

enum class EstimatorMode { phi_only, phi_plus_u, standard };
EstimatorMode parse_estimator_mode(std::string_view name);
std::string_view to_string(EstimatorMode m);

struct Config {
  Benchmark benchmark = Benchmark::tension;
  Material material;
  double tau = 1e-5;
  int steps = 370;
  double h0 = 0.044;
  int stages = 0;
  double theta = 0.5;
  EstimatorMode estimator = EstimatorMode::phi_only;
  bool splitting = false;
  std::string out_dir = "out";
  int time_index = 280;           // step used by the studies
  std::vector<double> eps_list;   // efficiency study; empty means {material.eps}
  int ref_levels = 3;             // extra uniform refinements of the reference mesh
  int vtk_every = 0;              // 0 disables VTK output
  long max_reference_dofs = 500000;

  Domain domain() const { return benchmark == Benchmark::lshape ? Domain::l_shape : Domain::unit_square; }
  void validate() const;
};

/// Published parameters of a benchmark.
Config benchmark_defaults(Benchmark b);

/// Flat `key = value` parser; `#` starts a comment. The physical and
/// discretization keys are required, the others fall back to the benchmark
/// defaults. Errors name the key or the line.
Config parse_config(std::istream& in, const std::string& source = "<config>");
Config load_config(const std::string& path);

/// "paper" keeps the configuration; "desk" takes five times larger steps
/// (tau * 5, steps / 5, time_index / 5).
void apply_preset(Config& cfg, std::string_view preset);

// ------------------------------------------------------------ benchmark setup

/// Nodal Dirichlet data for the displacement at step n.
Dirichlet displacement_bc(const Config& cfg, const QuadMesh& mesh, int n);
/// Components left free on each boundary side.
NeumannPredicate neumann_sides(const Config& cfg, const QuadMesh& mesh);
/// One for intact material, zero on the nodes of the initial slit.
NodalField initial_phase_field(Benchmark b, const MeshPtr& mesh);

struct Quantities {
  double crack_energy = 0.0;
  double bulk_energy = 0.0;
  double load = 0.0;
};

/// Crack and bulk energy of (u, phi) and the reaction on the loaded
/// boundary, integrated from g(phi_prev) sigma(u) n.
Quantities quantities(const Config& cfg, const NodalField& u, const NodalField& phi, const NodalField& phi_prev,
                      int order = 4);

// ------------------------------------------------------------ time stepping

struct StepRecord {
  int n = 0;
  double t = 0.0;
  Quantities q;
  double eta[4] = {0, 0, 0, 0};  // eta^phi parts
  double etau[3] = {0, 0, 0};
  double eta_phi = 0.0;
  double eta_u = 0.0;
  double eta_std = 0.0;
  int n_semi = 0;
  int n_full = 0;
  double complementarity = 0.0;  // max |min(o - phi, lambda)|
  double max_increase = 0.0;     // max (phi^n - phi^{n-1}) over master nodes
  double min_phi = 0.0;
  double max_phi = 0.0;
  int vi_iterations = 0;
  int u_iterations = 0;
};

/// Final-step data of a timeline.
struct StepState {
  int n = 0;
  NodalField u;
  NodalField phi;
  NodalField obstacle;
  VICoefficients coeffs;
  std::vector<char> active;
  std::vector<ContactClass> classes;
  std::optional<PhaseFieldEstimate> eta_phi;
  std::optional<StandardEstimate> eta_std;
  std::optional<ElasticityEstimate> eta_u;
};

struct RunOptions {
  int last_step = -1;      // -1: cfg.steps
  bool estimate = true;    // evaluate the estimators every step
  Exec exec = Exec::parallel;
  /// Called after every step with the step state (e.g. for VTK output).
  std::function<void(const StepRecord&, const StepState&)> on_step;
};

struct Run {
  MeshPtr mesh;
  std::vector<StepRecord> steps;
  StepState final;
  std::vector<double> indicator;  // per master node, max over the steps
};

Run run_timeline(const Config& cfg, const MeshPtr& mesh, const RunOptions& opts = {});

/// Smallest set of nodes, taken in descending order of indicator, whose
/// squares sum to at least theta^2 of the total. theta >= 1 marks all nodes.
std::vector<int> dorfler_mark(const std::vector<double>& indicator, double theta);
/// Mesh with every cell of the marked nodes' patches split.
MeshPtr refine_patches(const QuadMesh& mesh, const std::vector<int>& marked_masters);

struct Stage {
  int index = 0;
  Run run;
};

/// Stage 0 on the start mesh, then `cfg.stages` marked refinements, each
/// rerunning the timeline from t = 0.
std::vector<Stage> adaptive_loop(const Config& cfg, const RunOptions& opts = {},
                                 const std::function<void(const Stage&)>& on_stage = {});

MeshPtr start_mesh(const Config& cfg);
/// Start mesh refined uniformly `cfg.stages + cfg.ref_levels` times; throws
/// InputError above `cfg.max_reference_dofs` displacement DOFs.
MeshPtr reference_mesh(const Config& cfg);

// ------------------------------------------------------------ studies

struct ConvergenceRow {
  std::string series;  // adaptive | uniform
  int stage = 0;
  int nodes = 0;
  int dofs = 0;
  double err_phi_eps = 0.0;
  double err_u_energy = 0.0;
};
std::vector<ConvergenceRow> convergence_study(const Config& cfg, Exec exec = Exec::parallel);

struct EfficiencyRow {
  double eps = 0.0;
  int stage = 0;
  int nodes = 0;
  double eta_phi = 0.0;
  double err_phi_eps = 0.0;
  double index_robust = 0.0;  // infinite when the error vanishes
  double eta_std = 0.0;
  double err_phi_h1 = 0.0;
  double index_std = 0.0;
};
std::vector<EfficiencyRow> efficiency_study(const Config& cfg, Exec exec = Exec::parallel);

// ------------------------------------------------------------ output

void write_quantities_csv(const std::string& path, const std::vector<StepRecord>& steps);
void write_estimator_csv(const std::string& path, const std::vector<StepRecord>& steps);
void write_convergence_csv(const std::string& path, const std::vector<ConvergenceRow>& rows);
void write_efficiency_csv(const std::string& path, const std::vector<EfficiencyRow>& rows);

/// Legacy ASCII VTK of the leaf mesh with phi, u, contact class and the
/// per-node estimator as point data.
void write_vtk(const std::string& path, const StepState& state);

}  // namespace pfadapt
