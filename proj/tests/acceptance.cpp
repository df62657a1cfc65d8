// Acceptance checks: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <deque>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "pfadapt/sim.hpp"
#include "support.hpp"

using namespace pfadapt;
using namespace testing;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Config desk(const char* name) {
  Config c = load_config(std::string(PFADAPT_CONFIG_DIR) + "/" + name + ".cfg");
  apply_preset(c, "desk");
  return c;
}

// ------------------------------------------------------------ shared runs

struct Sample {
  MeshPtr mesh;
  NodalField phi;
  VICoefficients coeffs;
};

struct DeskRuns {
  std::vector<std::pair<std::string, Run>> runs;  // every desk timeline, all stages
  Run tension_final;                              // last adaptive tension stage
  Run tension_start;
  std::vector<Sample> samples;
  double eps = 0.0;
};

// Copies a few evenly spaced step states of stage 0 for the dual-path checks.
RunOptions sampling(const Config& cfg, int count, std::vector<Sample>& out, const int& stage) {
  RunOptions o;
  o.on_step = [&cfg, count, &out, &stage](const StepRecord& r, const StepState& s) {
    if (stage != 0) return;
    const int stride = std::max(1, cfg.steps / count);
    if (r.n % stride != 0 || r.n / stride > count) return;
    out.push_back({s.phi.mesh_ptr(), s.phi, s.coeffs});
  };
  return o;
}

DeskRuns desk_runs() {
  DeskRuns d;
  int stage = 0;
  {
    Config c = desk("tension");
    c.stages = 2;
    d.eps = c.material.eps;
    const auto stages = adaptive_loop(c, sampling(c, 7, d.samples, stage), [&](const Stage& s) {
      stage = s.index + 1;
      std::printf("  tension desk stage %d: %d nodes\n", s.index, s.run.mesh->n_masters());
      std::fflush(stdout);
    });
    for (const auto& s : stages) d.runs.emplace_back("tension stage " + std::to_string(s.index), s.run);
    d.tension_start = stages.front().run;
    d.tension_final = stages.back().run;
  }
  for (const char* name : {"shear", "lshape"}) {
    Config c = desk(name);
    stage = 0;
    const auto stages = adaptive_loop(c, sampling(c, std::string(name) == "shear" ? 7 : 6, d.samples, stage));
    d.runs.emplace_back(std::string(name) + " stage 0", stages.front().run);
    std::printf("  %s desk: %d nodes\n", name, stages.front().run.mesh->n_masters());
    std::fflush(stdout);
  }
  return d;
}

// ------------------------------------------------------------ criteria

Outcome oracle_equivalence() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  int max_nodes = 0;
  for (unsigned seed = 1000; seed < 1100; ++seed) {
    const ViInstance inst = random_vi_instance(seed);
    max_nodes = std::max(max_nodes, inst.mesh->n_masters());
    const VISolution sol = solve_vi(DofSystem(inst.mesh, 1), inst.coeffs);
    const auto dense = dense_vi_system(inst.coeffs);
    const auto kkt = oracle::enumerate_vi(dense.A, dense.b, inst.coeffs.obstacle.values());
    worst = std::max(worst, (sol.phi.values() - kkt.phi).cwiseAbs().maxCoeff());
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-9 && secs < 30.0 && max_nodes <= 13,
          fmt("100 instances (<= %d nodes), max |phi - phi_enum| = %.2e (tol 1e-9), %.1f s (limit 30)", max_nodes,
              worst, secs)};
}

Outcome dual_paths(const std::vector<Sample>& samples) {
  double force_dev = 0.0, galerkin = 0.0;
  std::mt19937 rng(7);
  for (const Sample& s : samples) {
    const ConstrainingForce f =
        constraining_force(DofSystem(s.mesh, 1), s.phi, s.coeffs, Exec::parallel, std::numeric_limits<double>::max());
    force_dev = std::max(force_dev, f.max_deviation);
    const auto classes = classify_contact(s.phi, s.coeffs);
    const MeshPtr fine = share(s.mesh->refined_uniformly(1));
    for (int k = 0; k < 10; ++k) {
      const NodalField psi = random_field(fine, static_cast<unsigned>(rng()), 1, -1.0, 1.0);
      galerkin = std::max(galerkin, galerkin_functional_check(s.phi, s.coeffs, classes, psi).difference());
    }
  }
  return {samples.size() >= 20 && force_dev <= 1e-9 && galerkin <= 1e-9,
          fmt("%zu steps: force algebraic vs integral %.2e, Galerkin functional %.2e over 10 probes/step (tol 1e-9)",
              samples.size(), force_dev, galerkin)};
}

Outcome zero_consistency() {
  std::vector<MeshPtr> meshes{unit_grid(1), unit_grid(4), unit_grid(16), hanging_mesh(4, 3, 3), hanging_mesh(8, 9, 4)};
  double worst_phi = 0.0, worst_u = 0.0;
  int cases = 0;
  for (Benchmark b : {Benchmark::tension, Benchmark::shear, Benchmark::lshape}) {
    const Config c = benchmark_defaults(b);
    std::vector<MeshPtr> ms = meshes;
    if (b == Benchmark::lshape) ms = {start_mesh(c), share(start_mesh(c)->refined(std::vector<int>{0, 5, 600}))};
    for (const MeshPtr& m : ms) {
      const NodalField u(m, 2);
      const NodalField one = NodalField::constant(m, 1.0);
      const VICoefficients coeffs = vi_coefficients(u, one, c.material, c.splitting);
      const VISolution sol = solve_vi(DofSystem(m, 1), coeffs);
      const ConstrainingForce f = constraining_force(DofSystem(m, 1), one, coeffs);
      const auto classes = classify_contact(one, coeffs);
      worst_phi = std::max(worst_phi, estimate_phi(one, coeffs, classes, f).total);
      worst_phi = std::max(worst_phi, (sol.phi.values().array() - 1.0).abs().maxCoeff());
      worst_u = std::max(worst_u, estimate_u(u, one, c.material, neumann_sides(c, *m)).total);
      ++cases;
    }
  }
  return {worst_phi <= 1e-12 && worst_u <= 1e-12,
          fmt("%d meshes: eta_phi = %.2e, eta_u = %.2e (tol 1e-12)", cases, worst_phi, worst_u)};
}

Outcome split_identities() {
  const Material m;  // mu = 80.77, lambda = 121.15
  std::mt19937 rng(11);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  double strain_dev = 0.0, stress_dev = 0.0, min_energy = std::numeric_limits<double>::max();
  for (int k = 0; k < 10000; ++k) {
    double s = k % 3 == 0 ? 1e-3 : 1.0;
    Sym2 E{s * u(rng), s * u(rng), s * u(rng)};
    if (k % 7 == 0) E.yy = E.xx;  // repeated eigenvalues along the way
    if (k % 11 == 0) E.xy = 0.0;
    const StrainSplit es = split_strain(E);
    const StressPair sp = stress_split(E, m.mu, m.lambda);
    const Sym2 ds = es.plus + es.minus - E;
    const Sym2 dsig = sp.plus + sp.minus - stress(E, m.mu, m.lambda);
    strain_dev = std::max({strain_dev, std::abs(ds.xx), std::abs(ds.yy), std::abs(ds.xy)});
    stress_dev = std::max({stress_dev, std::abs(dsig.xx), std::abs(dsig.yy), std::abs(dsig.xy)});
    min_energy = std::min(min_energy, ddot(sp.plus, E));
  }
  return {strain_dev <= 1e-12 && stress_dev <= 1e-12 && min_energy >= 0.0,
          fmt("10^4 strains: |E+ + E- - E| = %.2e, |s+ + s- - s| = %.2e (tol 1e-12), min s+:E = %.2e (>= 0)",
              strain_dev, stress_dev, min_energy)};
}

Outcome feasibility(const DeskRuns& d) {
  double inc = -std::numeric_limits<double>::max(), comp = 0.0;
  int steps = 0;
  for (const auto& [name, run] : d.runs)
    for (const auto& s : run.steps) {
      inc = std::max(inc, s.max_increase);
      comp = std::max(comp, s.complementarity);
      ++steps;
    }
  return {inc <= 1e-12 && comp <= 1e-9,
          fmt("%zu runs, %d steps: max(phi^n - phi^{n-1}) = %.2e (tol 1e-12), complementarity %.2e (tol 1e-9)",
              d.runs.size(), steps, inc, comp)};
}

// Sweep in the length scale on a coarser start mesh so the reference fits the DOF guard.
Outcome robustness_sweep() {
  const auto t0 = Clock::now();
  Config c = desk("tension");
  c.h0 = std::sqrt(2.0) / 8;
  c.stages = 2;
  c.eps_list = {0.044, 0.088, 0.176, 0.352};
  const auto rows = efficiency_study(c);
  double lo = std::numeric_limits<double>::max(), hi = 0.0;
  std::vector<double> finest;  // standard index at the last stage, ordered by eps
  std::string table;
  for (const auto& r : rows) {
    lo = std::min(lo, r.index_robust);
    hi = std::max(hi, r.index_robust);
    if (r.stage == c.stages) {
      finest.push_back(r.index_std);
      table += fmt(" eps=%g: robust %.3g std %.3g;", r.eps, r.index_robust, r.index_std);
    }
  }
  bool decreasing = finest.size() == 4;
  for (std::size_t k = 1; k < finest.size(); ++k) decreasing = decreasing && finest[k - 1] < finest[k];
  const double ratio = hi / lo;
  const double secs = seconds_since(t0);
  std::printf("  sweep:%s\n", table.c_str());
  return {std::isfinite(ratio) && ratio <= 5.0 && decreasing && secs <= 1800.0,
          fmt("robust index max/min = %.2f (tol 5), standard index strictly decreasing as eps halves: %s, %.0f s",
              ratio, decreasing ? "yes" : "no", secs)};
}

// Uniform error interpolated (log-log, piecewise linear) at a node count.
double uniform_error_at(const std::vector<ConvergenceRow>& rows, double nodes) {
  std::vector<std::pair<double, double>> u;
  for (const auto& r : rows)
    if (r.series == "uniform") u.emplace_back(std::log(r.nodes), std::log(r.err_phi_eps));
  const double x = std::log(nodes);
  std::size_t k = 1;
  while (k + 1 < u.size() && x > u[k].first) ++k;
  const double t = (x - u[k - 1].first) / (u[k].first - u[k - 1].first);
  return std::exp(u[k - 1].second + t * (u[k].second - u[k - 1].second));
}

Outcome adaptive_benefit() {
  bool pass = true;
  std::string detail;
  for (const char* name : {"tension", "shear"}) {
    Config c = desk(name);
    c.h0 = std::sqrt(2.0) / 8;
    c.stages = 2;
    const auto rows = convergence_study(c);
    for (const auto& r : rows) {
      if (r.series != "adaptive" || r.stage < c.stages - 1) continue;
      const double uni = uniform_error_at(rows, r.nodes);
      pass = pass && r.err_phi_eps <= uni;
      detail += fmt("%s stage %d: %d nodes, adaptive %.3e vs uniform %.3e; ", name, r.stage, r.nodes, r.err_phi_eps, uni);
    }
  }
  detail.resize(detail.size() - 2);
  return {pass, detail};
}

Outcome crack_path(const DeskRuns& d) {
  const Run& run = d.tension_final;
  const QuadMesh& mesh = *run.mesh;
  const NodalField& phi = run.final.phi;
  std::vector<char> band(mesh.n_vertices());
  std::vector<std::vector<int>> adj(mesh.n_vertices());
  for (int v = 0; v < mesh.n_vertices(); ++v) band[v] = phi.vertex_value(v) < 0.1;
  for (const auto& lf : mesh.leaves()) {
    const int e[4][2] = {{0, 1}, {1, 3}, {3, 2}, {2, 0}};
    for (const auto& p : e) {
      adj[lf.corners[p[0]]].push_back(lf.corners[p[1]]);
      adj[lf.corners[p[1]]].push_back(lf.corners[p[0]]);
    }
  }
  // Search from the slit tip through band vertices.
  std::deque<int> queue;
  std::vector<char> seen(mesh.n_vertices(), 0);
  for (int v = 0; v < mesh.n_vertices(); ++v)
    if (norm(mesh.vertex(v).x - Point{0.25, 0.5}) < 1e-12 && band[v]) {
      queue.push_back(v);
      seen[v] = 1;
    }
  bool connected = false;
  while (!queue.empty()) {
    const int v = queue.front();
    queue.pop_front();
    if (mesh.vertex(v).x.x <= 1e-12) connected = true;
    for (int w : adj[v])
      if (band[w] && !seen[w]) {
        seen[w] = 1;
        queue.push_back(w);
      }
  }

  std::vector<Point> band_points;
  for (int v = 0; v < mesh.n_vertices(); ++v)
    if (band[v]) band_points.push_back(mesh.vertex(v).x);
  const int finest = mesh.max_level();
  int n_finest = 0, near = 0;
  for (const auto& lf : mesh.leaves()) {
    if (lf.level != finest) continue;
    ++n_finest;
    const Point centre = lf.origin + Point{0.5 * lf.h, 0.5 * lf.h};
    double dist = std::numeric_limits<double>::max();
    for (const Point& p : band_points) dist = std::min(dist, norm(centre - p));
    near += dist <= 4.0 * d.eps;
  }
  const double share_near = n_finest ? static_cast<double>(near) / n_finest : 0.0;

  // One peak: nondecreasing (2% slack) up to the maximum, then below half of it for good.
  const auto& steps = run.steps;
  std::size_t peak = 0;
  for (std::size_t n = 0; n < steps.size(); ++n)
    if (steps[n].q.load > steps[peak].q.load) peak = n;
  const double pmax = steps[peak].q.load;
  bool rising = true;
  double running = 0.0;
  for (std::size_t n = 0; n <= peak; ++n) {
    rising = rising && steps[n].q.load >= running - 0.02 * pmax;
    running = std::max(running, steps[n].q.load);
  }
  bool dropped = false, stays = true;
  for (std::size_t n = peak; n < steps.size(); ++n) {
    if (steps[n].q.load < 0.5 * pmax) dropped = true;
    else if (dropped) stays = false;
  }
  const double final_ratio = steps.back().q.load / pmax;
  const bool pass = connected && share_near >= 0.6 && rising && dropped && stays;
  return {pass, fmt("band tip->left edge connected: %s; %.0f%% of %d finest cells within 4 eps (min 60%%); "
                    "load peak %.3g at step %zu, single rise: %s, final/peak = %.2f (< 0.5)",
                    connected ? "yes" : "no", 100 * share_near, n_finest, pmax, peak + 1, rising ? "yes" : "no",
                    final_ratio)};
}

Outcome energy_behaviour(const DeskRuns& d) {
  double worst_drop = 0.0;
  for (const auto& [name, run] : d.runs)
    for (std::size_t n = 1; n < run.steps.size(); ++n)
      worst_drop = std::max(worst_drop, run.steps[n - 1].q.crack_energy - run.steps[n].q.crack_energy);
  bool interior = true;
  std::string where;
  for (const Run* run : {&d.tension_start, &d.tension_final}) {
    const auto& s = run->steps;
    std::size_t k = 0;
    for (std::size_t n = 0; n < s.size(); ++n)
      if (s[n].q.bulk_energy > s[k].q.bulk_energy) k = n;
    const bool ok = k > 0 && k + 1 < s.size() && s.back().q.bulk_energy < s[k].q.bulk_energy;
    interior = interior && ok;
    where += fmt(" %zu/%zu", k + 1, s.size());
  }
  return {worst_drop <= 1e-8 && interior,
          fmt("largest crack-energy decrease %.2e (slack 1e-8); tension bulk-energy maximum at step%s (interior: %s)",
              std::max(worst_drop, 0.0), where.c_str(), interior ? "yes" : "no")};
}

Outcome fe_kernel() {
  // -div(grad u) + u = f with u = sin(pi x) sin(pi y), homogeneous Dirichlet data.
  const double pi = std::acos(-1.0);
  auto exact = [&](Point x) { return std::sin(pi * x.x) * std::sin(pi * x.y); };
  auto grad = [&](Point x) {
    return Point{pi * std::cos(pi * x.x) * std::sin(pi * x.y), pi * std::sin(pi * x.x) * std::cos(pi * x.y)};
  };
  std::vector<double> errs;
  for (int n : {8, 16, 32, 64}) {
    const MeshPtr m = unit_grid(n);
    const DofSystem dofs(m, 1);
    SparseMatrix A = assemble_bilinear(dofs, CellTable::filled(m->n_leaves(), 1.0), 1.0);
    Eigen::VectorXd b = assemble_source(dofs, tabulate(*m, [&](Point x) { return (2 * pi * pi + 1) * exact(x); }));
    apply_dirichlet(A, b, boundary_data(*m, [](Point) { return 0.0; }));
    const NodalField uh(m, 1, solve_spd(A, b));
    errs.push_back(std::sqrt(integrate(*m, 6, [&](int e, Point r, Point x) {
      const Point d = uh.gradient(e, r) - grad(x);
      const double v = uh.value(e, r) - exact(x);
      return dot(d, d) + v * v;
    })));
  }
  bool rates_ok = true;
  std::string rates;
  for (std::size_t k = 1; k < errs.size(); ++k) {
    const double rate = std::log2(errs[k - 1] / errs[k]);
    rates_ok = rates_ok && std::abs(rate - 1.0) <= 0.2;
    rates += fmt(" %.3f", rate);
  }

  double dev = 0.0;
  const Material mat;
  std::vector<MeshPtr> meshes{unit_grid(2), unit_grid(8), hanging_mesh(4, 21, 3), hanging_mesh(6, 22, 4),
                              start_mesh(benchmark_defaults(Benchmark::lshape))};
  for (const MeshPtr& m : meshes) {
    const NodalField w = random_field(m, 23);
    const DofSystem dofs(m, 1);
    const auto reaction = [&](int e, Point r) {
      const double v = w.value(e, r);
      return mat.gc / mat.eps + v * v;
    };
    const QuadRule& rule = tensor_gauss(kAssemblyOrder);
    CellTable react = CellTable::filled(m->n_leaves(), 0.0);
    for (int e = 0; e < m->n_leaves(); ++e)
      for (int q = 0; q < react.nq; ++q) react(e, q) = reaction(e, rule.points[q]);
    const SparseMatrix A = assemble_bilinear(dofs, react, mat.gc * mat.eps);
    const auto dense = oracle::dense_assembly(*m, reaction, mat.gc * mat.eps, 1.0);
    dev = std::max(dev, (Eigen::MatrixXd(A) - dense.A).cwiseAbs().maxCoeff() / dense.A.cwiseAbs().maxCoeff());
  }
  return {rates_ok && dev <= 1e-10,
          fmt("energy-norm rates%s over 8..64 (1 +- 0.2); assembly vs dense oracle %.2e relative (tol 1e-10)",
              rates.c_str(), dev)};
}

}  // namespace

int main() {
  std::setvbuf(stdout, nullptr, _IOLBF, 0);
  int failed = 0;
  const auto report = [&](int id, const char* name, const std::function<Outcome()>& check) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("[%s] %2d %s: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str(),
                seconds_since(t0));
  };

  std::printf("desk runs (tension with 2 adaptive stages, shear, l-shape)\n");
  const auto t0 = Clock::now();
  DeskRuns runs;
  std::string desk_error;
  try {
    runs = desk_runs();
    std::printf("  done in %.1f s\n", seconds_since(t0));
  } catch (const std::exception& e) {
    desk_error = std::string("desk run failed: ") + e.what();
    std::printf("  %s\n", desk_error.c_str());
  }
  // Criteria that read the desk runs fail with the run's error.
  const auto on_runs = [&](Outcome (*f)(const DeskRuns&)) {
    return [&, f]() -> Outcome {
      if (!desk_error.empty()) return {false, desk_error};
      return f(runs);
    };
  };

  report(1, "oracle equivalence", oracle_equivalence);
  report(2, "dual-path identities", on_runs([](const DeskRuns& d) { return dual_paths(d.samples); }));
  report(3, "zero consistency", zero_consistency);
  report(4, "splitting identities", split_identities);
  report(5, "irreversibility and feasibility", on_runs(feasibility));
  report(6, "robustness sweep", robustness_sweep);
  report(7, "adaptive benefit", adaptive_benefit);
  report(8, "crack path", on_runs(crack_path));
  report(9, "energy behaviour", on_runs(energy_behaviour));
  report(10, "FE kernel", fe_kernel);
  std::printf("%d of 10 criteria failed\n", failed);
  return failed ? 1 : 0;
}
