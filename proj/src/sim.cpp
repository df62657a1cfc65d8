#include "pfadapt/sim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include "pfadapt/oracle.hpp"

namespace pfadapt {

// ------------------------------------------------------------ names

Benchmark parse_benchmark(std::string_view name) {
  if (name == "tension") return Benchmark::tension;
  if (name == "shear") return Benchmark::shear;
  if (name == "lshape" || name == "l-shape") return Benchmark::lshape;
  throw InputError("unknown benchmark '" + std::string(name) + "' (expected tension, shear or lshape)");
}

std::string_view to_string(Benchmark b) {
  switch (b) {
    case Benchmark::tension: return "tension";
    case Benchmark::shear: return "shear";
    case Benchmark::lshape: return "lshape";
  }
  return "?";
}

EstimatorMode parse_estimator_mode(std::string_view name) {
  if (name == "phi-only") return EstimatorMode::phi_only;
  if (name == "phi-plus-u") return EstimatorMode::phi_plus_u;
  if (name == "standard-nonrobust") return EstimatorMode::standard;
  throw InputError("unknown estimator '" + std::string(name) +
                   "' (expected phi-only, phi-plus-u or standard-nonrobust)");
}

std::string_view to_string(EstimatorMode m) {
  switch (m) {
    case EstimatorMode::phi_only: return "phi-only";
    case EstimatorMode::phi_plus_u: return "phi-plus-u";
    case EstimatorMode::standard: return "standard-nonrobust";
  }
  return "?";
}

// ------------------------------------------------------------ configuration

void Config::validate() const {
  material.validate();
  if (!(tau >= 0.0) || !std::isfinite(tau)) throw ConfigError("tau must be nonnegative");
  if (steps < 0) throw ConfigError("steps must be nonnegative");
  if (!(h0 > 0.0)) throw ConfigError("h0 must be positive");
  if (stages < 0) throw ConfigError("stages must be nonnegative");
  if (!(theta > 0.0)) throw ConfigError("theta must be positive");
  if (time_index < 1 || time_index > steps) throw ConfigError("time_index must lie in [1, steps]");
  if (ref_levels < 3) throw ConfigError("ref_levels must be at least 3");
  if (vtk_every < 0) throw ConfigError("vtk_every must be nonnegative");
  for (double e : eps_list)
    if (!(e > 0.0)) throw ConfigError("eps_list entries must be positive");
}

Config benchmark_defaults(Benchmark b) {
  Config c;
  c.benchmark = b;
  switch (b) {
    case Benchmark::tension:
      c.tau = 1e-5;
      c.steps = 370;
      c.h0 = 0.044;
      c.splitting = false;
      c.time_index = 280;
      break;
    case Benchmark::shear:
      c.tau = 1e-4;
      c.steps = 180;
      c.h0 = 0.044;
      c.splitting = true;
      c.time_index = 107;
      break;
    case Benchmark::lshape:
      c.material = Material{10.95, 6.16, 8.9e-5, 1e-8, 20.0};
      c.tau = 1e-3;
      c.steps = 300;
      c.h0 = 17.67;
      c.splitting = true;
      c.time_index = 200;
      break;
  }
  return c;
}

namespace {

std::string trim(std::string s) {
  const auto not_space = [](unsigned char ch) { return !std::isspace(ch); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

double to_double(const std::string& key, const std::string& v, const std::string& where) {
  std::size_t pos = 0;
  double x = 0.0;
  try {
    x = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != v.size() || v.empty()) throw ConfigError(where + ": key '" + key + "' expects a number, got '" + v + "'");
  return x;
}

long to_long(const std::string& key, const std::string& v, const std::string& where) {
  const double x = to_double(key, v, where);
  if (x != std::floor(x)) throw ConfigError(where + ": key '" + key + "' expects an integer, got '" + v + "'");
  return static_cast<long>(x);
}

bool to_bool(const std::string& key, const std::string& v, const std::string& where) {
  if (v == "on" || v == "true" || v == "1" || v == "yes") return true;
  if (v == "off" || v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(where + ": key '" + key + "' expects on/off, got '" + v + "'");
}

}  // namespace

Config parse_config(std::istream& in, const std::string& source) {
  struct Entry {
    std::string value;
    int line;
  };
  std::map<std::string, Entry> kv;
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    if (hash != std::string::npos) raw.erase(hash);
    const std::string line = trim(raw);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = source + ":" + std::to_string(line_no);
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(where + ": empty key");
    if (kv.count(key)) throw ConfigError(where + ": duplicate key '" + key + "'");
    kv[key] = {value, line_no};
  }

  static const char* required[] = {"benchmark", "mu", "lambda", "gc", "kappa", "eps", "tau", "steps", "h0"};
  for (const char* key : required) {
    if (!kv.count(key)) throw ConfigError(source + ": missing required key '" + std::string(key) + "'");
  }
  const auto where = [&](const std::string& key) { return source + ":" + std::to_string(kv.at(key).line); };

  Config c;
  try {
    c = benchmark_defaults(parse_benchmark(kv.at("benchmark").value));
  } catch (const ConfigError&) {
    throw;
  } catch (const InputError& e) {
    throw ConfigError(where("benchmark") + ": " + e.what());
  }
  for (const auto& [key, entry] : kv) {
    const std::string& v = entry.value;
    const std::string w = where(key);
    if (key == "benchmark") {
    } else if (key == "mu") {
      c.material.mu = to_double(key, v, w);
    } else if (key == "lambda") {
      c.material.lambda = to_double(key, v, w);
    } else if (key == "gc") {
      c.material.gc = to_double(key, v, w);
    } else if (key == "kappa") {
      c.material.kappa = to_double(key, v, w);
    } else if (key == "eps") {
      c.material.eps = to_double(key, v, w);
    } else if (key == "tau") {
      c.tau = to_double(key, v, w);
    } else if (key == "steps") {
      c.steps = static_cast<int>(to_long(key, v, w));
    } else if (key == "h0") {
      c.h0 = to_double(key, v, w);
    } else if (key == "stages") {
      c.stages = static_cast<int>(to_long(key, v, w));
    } else if (key == "theta") {
      c.theta = to_double(key, v, w);
    } else if (key == "estimator") {
      try {
        c.estimator = parse_estimator_mode(v);
      } catch (const InputError& e) {
        throw ConfigError(w + ": " + e.what());
      }
    } else if (key == "splitting") {
      c.splitting = to_bool(key, v, w);
    } else if (key == "out_dir") {
      c.out_dir = v;
    } else if (key == "time_index") {
      c.time_index = static_cast<int>(to_long(key, v, w));
    } else if (key == "eps_list") {
      c.eps_list.clear();
      std::stringstream ss(v);
      std::string item;
      while (std::getline(ss, item, ',')) c.eps_list.push_back(to_double(key, trim(item), w));
    } else if (key == "ref_levels") {
      c.ref_levels = static_cast<int>(to_long(key, v, w));
    } else if (key == "vtk_every") {
      c.vtk_every = static_cast<int>(to_long(key, v, w));
    } else if (key == "max_reference_dofs") {
      c.max_reference_dofs = to_long(key, v, w);
    } else {
      throw ConfigError(w + ": unknown key '" + key + "'");
    }
  }
  // A shortened run keeps the study index inside the timeline.
  if (!kv.count("time_index")) c.time_index = std::min(c.time_index, std::max(c.steps, 1));
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(source + ": " + e.what());
  } catch (const InputError& e) {
    throw ConfigError(source + ": " + e.what());
  }
  return c;
}

Config load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  return parse_config(in, path);
}

void apply_preset(Config& cfg, std::string_view preset) {
  if (preset == "paper") return;
  if (preset != "desk") throw ConfigError("unknown preset '" + std::string(preset) + "' (expected desk or paper)");
  cfg.tau *= 5.0;
  cfg.steps = (cfg.steps + 4) / 5;
  cfg.time_index = std::clamp(static_cast<int>(std::lround(cfg.time_index / 5.0)), 1, std::max(cfg.steps, 1));
}

// ------------------------------------------------------------ benchmark setup

namespace {

double domain_scale(const QuadMesh& mesh) { return mesh.domain() == Domain::l_shape ? 500.0 : 1.0; }

bool near(double a, double b, double scale) { return std::abs(a - b) <= 1e-9 * scale; }

/// Loaded boundary part and the direction of the prescribed motion.
bool on_loaded_side(Benchmark b, const QuadMesh::Side& s) {
  switch (b) {
    case Benchmark::tension:
    case Benchmark::shear:
      return s.label == BoundaryLabel::top;
    case Benchmark::lshape:
      return s.label == BoundaryLabel::notch_horizontal && 0.5 * (s.a.x + s.b.x) >= 470.0;
  }
  return false;
}

Point load_direction(Benchmark b) { return b == Benchmark::shear ? Point{-1.0, 0.0} : Point{0.0, 1.0}; }

}  // namespace

Dirichlet displacement_bc(const Config& cfg, const QuadMesh& mesh, int n) {
  Dirichlet bc;
  const double scale = domain_scale(mesh);
  const double tn = cfg.tau * n;
  for (int m = 0; m < mesh.n_masters(); ++m) {
    const auto& v = mesh.vertex(mesh.master_vertex(m));
    if (!v.on_boundary) continue;
    const Point x = v.x;
    switch (cfg.benchmark) {
      case Benchmark::tension:
        if (near(x.y, 0.0, scale)) {
          bc.add(2 * m, 0.0);
          bc.add(2 * m + 1, 0.0);
        } else if (near(x.y, 1.0, scale)) {
          bc.add(2 * m, 0.0);
          bc.add(2 * m + 1, 2.0 * tn);
        }
        break;
      case Benchmark::shear:
        if (near(x.y, 0.0, scale)) bc.add(2 * m, 0.0);
        if (near(x.y, 1.0, scale)) bc.add(2 * m, -tn);
        bc.add(2 * m + 1, 0.0);
        break;
      case Benchmark::lshape:
        if (near(x.y, 0.0, scale)) {
          bc.add(2 * m, 0.0);
          bc.add(2 * m + 1, 0.0);
        } else if (near(x.y, 250.0, scale) && x.x >= 470.0 - 1e-9 * scale) {
          bc.add(2 * m + 1, tn);
        }
        break;
    }
  }
  return bc;
}

NeumannPredicate neumann_sides(const Config& cfg, const QuadMesh& mesh) {
  // bit k set: component k is natural on that side
  std::vector<unsigned char> free_bits(mesh.sides().size(), 0);
  for (std::size_t s = 0; s < free_bits.size(); ++s) {
    const auto& sd = mesh.side(static_cast<int>(s));
    if (!sd.on_boundary()) continue;
    unsigned char bits = 0;
    switch (cfg.benchmark) {
      case Benchmark::tension:
        bits = (sd.label == BoundaryLabel::left || sd.label == BoundaryLabel::right) ? 3 : 0;
        break;
      case Benchmark::shear:
        bits = (sd.label == BoundaryLabel::left || sd.label == BoundaryLabel::right) ? 1 : 0;
        break;
      case Benchmark::lshape:
        if (sd.label == BoundaryLabel::bottom) bits = 0;
        else if (on_loaded_side(Benchmark::lshape, sd)) bits = 1;
        else bits = 3;
        break;
    }
    free_bits[s] = bits;
  }
  return [free_bits](int side, int comp) { return ((free_bits[side] >> comp) & 1u) != 0; };
}

NodalField initial_phase_field(Benchmark b, const MeshPtr& mesh) {
  const double slit_start = b == Benchmark::tension ? 0.25 : 0.5;
  return NodalField::interpolate(
      mesh,
      [b, slit_start](Point x, int) {
        if (b == Benchmark::lshape) return 1.0;
        const bool on_slit = std::abs(x.y - 0.5) <= 1e-9 && x.x >= slit_start - 1e-9;
        return on_slit ? 0.0 : 1.0;
      },
      1);
}

Quantities quantities(const Config& cfg, const NodalField& u, const NodalField& phi, const NodalField& phi_prev,
                      int order) {
  const QuadMesh& mesh = phi.mesh();
  const Material& mat = cfg.material;
  const QuadRule& rule = tensor_gauss(order);
  std::vector<double> crack(mesh.n_leaves(), 0.0), bulk(mesh.n_leaves(), 0.0);
#pragma omp parallel for schedule(static)
  for (int e = 0; e < mesh.n_leaves(); ++e) {
    const double area = mesh.leaf(e).h * mesh.leaf(e).h;
    double c = 0.0, b = 0.0;
    for (std::size_t q = 0; q < rule.points.size(); ++q) {
      const Point r = rule.points[q];
      const double w = rule.weights[q] * area;
      const double p = phi.value(e, r);
      const Point gp = phi.gradient(e, r);
      c += w * 0.5 * mat.gc * ((1.0 - p) * (1.0 - p) / mat.eps + mat.eps * dot(gp, gp));
      const Sym2 E = strain(u, e, r);
      const double g = degradation(p, mat.kappa);
      if (cfg.splitting) {
        const StressPair sp = stress_split(E, mat.mu, mat.lambda);
        b += w * 0.5 * (g * ddot(sp.plus, E) + ddot(sp.minus, E));
      } else {
        b += w * 0.5 * g * ddot(stress(E, mat.mu, mat.lambda), E);
      }
    }
    crack[e] = c;
    bulk[e] = b;
  }
  Quantities out;
  for (int e = 0; e < mesh.n_leaves(); ++e) {
    out.crack_energy += crack[e];
    out.bulk_energy += bulk[e];
  }
  const GaussLine& line = gauss_line(3);
  const Point dir = load_direction(cfg.benchmark);
  for (const auto& s : mesh.sides()) {
    if (!s.on_boundary() || !on_loaded_side(cfg.benchmark, s)) continue;
    const auto& lf = mesh.leaf(s.minus);
    for (std::size_t q = 0; q < line.x.size(); ++q) {
      const Point x = s.a + line.x[q] * (s.b - s.a);
      const Point r = to_reference(lf, x);
      const Sym2 E = strain(u, s.minus, r);
      const double g = degradation(phi_prev.value(s.minus, r), mat.kappa);
      Sym2 sig = g * stress(E, mat.mu, mat.lambda);
      if (cfg.splitting) {
        const StressPair sp = stress_split(E, mat.mu, mat.lambda);
        sig = g * sp.plus + sp.minus;
      }
      const Point t{sig.xx * s.normal.x + sig.xy * s.normal.y, sig.xy * s.normal.x + sig.yy * s.normal.y};
      out.load += line.w[q] * s.length * dot(t, dir);
    }
  }
  return out;
}

// ------------------------------------------------------------ time stepping

namespace {

template <class F>
auto with_context(const std::string& prefix, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const ConfigError& e) {
    throw ConfigError(prefix + e.what());
  } catch (const InputError& e) {
    throw InputError(prefix + e.what());
  } catch (const NumericalError& e) {
    throw NumericalError(prefix + e.what());
  }
}

double rss(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

Run run_timeline(const Config& cfg, const MeshPtr& mesh, const RunOptions& opts) {
  const Material& mat = cfg.material;
  const int last = opts.last_step < 0 ? cfg.steps : opts.last_step;
  const DofSystem du(mesh, 2);
  const DofSystem dp(mesh, 1);
  const int nm = mesh->n_masters();
  const NeumannPredicate neumann = neumann_sides(cfg, *mesh);

  Run run;
  run.mesh = mesh;
  run.indicator.assign(nm, 0.0);
  NodalField phi_prev = initial_phase_field(cfg.benchmark, mesh);
  std::vector<char> active;
  SpdSolver usolver;

  for (int n = 1; n <= last; ++n) {
    with_context("step " + std::to_string(n) + ": ", [&] {
      StepRecord rec;
      rec.n = n;
      rec.t = cfg.tau * n;
      StepState st;
      st.n = n;
      const Dirichlet bc = displacement_bc(cfg, *mesh, n);
      DisplacementSolve us = solve_displacement(du, phi_prev, bc, mat, cfg.splitting, opts.exec, &usolver);
      rec.u_iterations = us.iterations;
      st.obstacle = phi_prev;
      st.coeffs = vi_coefficients(us.u, st.obstacle, mat, cfg.splitting);
      VISolution sol = solve_vi(dp, st.coeffs, active.empty() ? nullptr : &active, opts.exec);
      rec.vi_iterations = sol.iterations;
      rec.complementarity = complementarity_residual(sol, st.obstacle);
      const Eigen::VectorXd inc = sol.phi.values() - st.obstacle.values();
      rec.max_increase = inc.maxCoeff();
      rec.min_phi = sol.phi.values().minCoeff();
      rec.max_phi = sol.phi.values().maxCoeff();

      if (opts.estimate) {
        const ConstrainingForce force = constraining_force(dp, sol.phi, st.coeffs, opts.exec);
        st.classes = classify_contact(sol.phi, st.coeffs);
        st.eta_phi = estimate_phi(sol.phi, st.coeffs, st.classes, force, 4, opts.exec);
        st.eta_std = estimate_phi_standard(sol.phi, st.coeffs, st.classes, force, 4, opts.exec);
        st.eta_u = estimate_u(us.u, phi_prev, mat, neumann, 4, opts.exec);
        const PhaseFieldEstimate& ep = *st.eta_phi;
        const ElasticityEstimate& eu = *st.eta_u;
        rec.eta[0] = ep.total1;
        rec.eta[1] = ep.total2;
        rec.eta[2] = ep.total3;
        rec.eta[3] = ep.total4;
        rec.eta_phi = ep.total;
        rec.etau[0] = eu.total1;
        rec.etau[1] = eu.total2;
        rec.etau[2] = eu.total3;
        rec.eta_u = eu.total;
        rec.eta_std = st.eta_std->total;
        rec.n_semi = ep.n_semi;
        rec.n_full = ep.n_full;

        std::vector<double> node_phi(nm), node_u(nm);
        for (int m = 0; m < nm; ++m) {
          node_phi[m] = ep.node_total(m);
          node_u[m] = std::sqrt(eu.eta1[m] * eu.eta1[m] + eu.eta2[m] * eu.eta2[m] + eu.eta3[m] * eu.eta3[m]);
        }
        const double tphi = rss(node_phi);
        const double tu = rss(node_u);
        for (int m = 0; m < nm; ++m) {
          double iota = 0.0;
          switch (cfg.estimator) {
            case EstimatorMode::phi_only:
              iota = node_phi[m];
              break;
            case EstimatorMode::phi_plus_u:
              iota = (tphi > 0.0 ? node_phi[m] / tphi : 0.0) + (tu > 0.0 ? node_u[m] / tu : 0.0);
              break;
            case EstimatorMode::standard:
              iota = std::hypot(st.eta_std->eta[m], ep.eta4[m]);
              break;
          }
          run.indicator[m] = std::max(run.indicator[m], iota);
        }
      }
      rec.q = quantities(cfg, us.u, sol.phi, phi_prev);
      st.u = std::move(us.u);
      st.phi = sol.phi;
      st.active = sol.active;
      if (opts.on_step) opts.on_step(rec, st);
      run.steps.push_back(rec);
      phi_prev = sol.phi;
      active = std::move(sol.active);
      run.final = std::move(st);
    });
  }
  if (last == 0) {
    run.final.phi = phi_prev;
    run.final.obstacle = phi_prev;
    run.final.u = NodalField(mesh, 2);
  }
  return run;
}

std::vector<int> dorfler_mark(const std::vector<double>& indicator, double theta) {
  const int n = static_cast<int>(indicator.size());
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  if (theta >= 1.0) return order;
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return indicator[a] > indicator[b]; });
  double total = 0.0;
  for (double x : indicator) total += x * x;
  std::vector<int> marked;
  if (!(total > 0.0)) return marked;
  double acc = 0.0;
  for (int m : order) {
    if (acc >= theta * theta * total) break;
    marked.push_back(m);
    acc += indicator[m] * indicator[m];
  }
  return marked;
}

MeshPtr refine_patches(const QuadMesh& mesh, const std::vector<int>& marked_masters) {
  std::vector<char> flag(mesh.n_leaves(), 0);
  for (int m : marked_masters)
    for (int e : mesh.patch(m).cells) flag[e] = 1;
  std::vector<int> cells;
  for (int e = 0; e < mesh.n_leaves(); ++e)
    if (flag[e]) cells.push_back(e);
  return share(mesh.refined(cells));
}

MeshPtr start_mesh(const Config& cfg) { return share(QuadMesh::build(cfg.domain(), cfg.h0)); }

MeshPtr reference_mesh(const Config& cfg) {
  const MeshPtr start = start_mesh(cfg);
  const int levels = cfg.stages + cfg.ref_levels;
  const double leaves = start->n_leaves() * std::pow(4.0, levels);
  const double dofs = 2.0 * (leaves + 4.0 * std::sqrt(leaves) + 1.0);
  if (dofs > static_cast<double>(cfg.max_reference_dofs)) {
    std::ostringstream msg;
    msg << "reference mesh would carry about " << static_cast<long>(dofs) << " displacement DOFs (limit "
        << cfg.max_reference_dofs << "); use fewer stages, fewer ref_levels or a coarser h0";
    throw InputError(msg.str());
  }
  return share(start->refined_uniformly(levels));
}

std::vector<Stage> adaptive_loop(const Config& cfg, const RunOptions& opts,
                                 const std::function<void(const Stage&)>& on_stage) {
  std::vector<Stage> stages;
  MeshPtr mesh = start_mesh(cfg);
  for (int k = 0; k <= cfg.stages; ++k) {
    Stage st;
    st.index = k;
    st.run = with_context("stage " + std::to_string(k) + ", ", [&] { return run_timeline(cfg, mesh, opts); });
    if (on_stage) on_stage(st);
    if (k < cfg.stages) mesh = refine_patches(*st.run.mesh, dorfler_mark(st.run.indicator, cfg.theta));
    stages.push_back(std::move(st));
  }
  return stages;
}

// ------------------------------------------------------------ studies

namespace {

struct Reference {
  MeshPtr mesh;
  StepState state;
};

Reference reference_solution(const Config& cfg, Exec exec) {
  Reference ref;
  ref.mesh = reference_mesh(cfg);
  RunOptions o;
  o.last_step = cfg.time_index;
  o.estimate = false;
  o.exec = exec;
  Run r = with_context("reference run, ", [&] { return run_timeline(cfg, ref.mesh, o); });
  ref.state = std::move(r.final);
  return ref;
}

double index_of(double eta, double err) {
  return err > 0.0 ? eta / err : std::numeric_limits<double>::infinity();
}

}  // namespace

std::vector<ConvergenceRow> convergence_study(const Config& cfg, Exec exec) {
  const Reference ref = reference_solution(cfg, exec);
  oracle::ReferenceData phi_data;
  phi_data.coeffs = &ref.state.coeffs;
  std::vector<ConvergenceRow> rows;
  const auto add_row = [&](const std::string& series, int stage, const StepState& s) {
    oracle::ReferenceData u_data;
    u_data.material = cfg.material;
    u_data.degradation_phi = &s.phi;
    ConvergenceRow row;
    row.series = series;
    row.stage = stage;
    row.nodes = s.phi.mesh().n_masters();
    row.dofs = 2 * row.nodes;
    row.err_phi_eps = oracle::reference_error(s.phi, ref.state.phi, oracle::Norm::eps_energy, phi_data);
    row.err_u_energy = oracle::reference_error(s.u, ref.state.u, oracle::Norm::u_energy, u_data);
    rows.push_back(row);
  };

  RunOptions o;
  o.last_step = cfg.time_index;
  o.exec = exec;
  adaptive_loop(cfg, o, [&](const Stage& st) { add_row("adaptive", st.index, st.run.final); });

  o.estimate = false;
  const MeshPtr start = start_mesh(cfg);
  for (int k = 0; k <= cfg.stages; ++k) {
    const MeshPtr mesh = k == 0 ? start : share(start->refined_uniformly(k));
    const Run r = with_context("uniform stage " + std::to_string(k) + ", ", [&] { return run_timeline(cfg, mesh, o); });
    add_row("uniform", k, r.final);
  }
  return rows;
}

std::vector<EfficiencyRow> efficiency_study(const Config& cfg, Exec exec) {
  std::vector<double> eps_list = cfg.eps_list;
  if (eps_list.empty()) eps_list.push_back(cfg.material.eps);
  std::vector<EfficiencyRow> rows;
  for (double eps : eps_list) {
    Config c = cfg;
    c.material.eps = eps;
    const Reference ref = reference_solution(c, exec);
    oracle::ReferenceData phi_data;
    phi_data.coeffs = &ref.state.coeffs;
    RunOptions o;
    o.last_step = c.time_index;
    o.exec = exec;
    adaptive_loop(c, o, [&](const Stage& st) {
      const StepState& s = st.run.final;
      EfficiencyRow row;
      row.eps = eps;
      row.stage = st.index;
      row.nodes = s.phi.mesh().n_masters();
      row.eta_phi = s.eta_phi ? s.eta_phi->total : 0.0;
      row.eta_std = s.eta_std ? s.eta_std->total : 0.0;
      row.err_phi_eps = oracle::reference_error(s.phi, ref.state.phi, oracle::Norm::eps_energy, phi_data);
      row.err_phi_h1 = oracle::reference_error(s.phi, ref.state.phi, oracle::Norm::h1, phi_data);
      row.index_robust = index_of(row.eta_phi, row.err_phi_eps);
      row.index_std = index_of(row.eta_std, row.err_phi_h1);
      rows.push_back(row);
    });
  }
  return rows;
}

// ------------------------------------------------------------ output

namespace {

std::ofstream open_out(const std::string& path) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream out(path);
  if (!out) throw InputError("cannot write '" + path + "'");
  return out;
}

std::string num(double x) {
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.12g", x);
  return buf;
}

}  // namespace

void write_quantities_csv(const std::string& path, const std::vector<StepRecord>& steps) {
  auto out = open_out(path);
  out << "n,t,crack_energy,bulk_energy,load\n";
  for (const auto& s : steps) {
    out << s.n << ',' << num(s.t) << ',' << num(s.q.crack_energy) << ',' << num(s.q.bulk_energy) << ','
        << num(s.q.load) << '\n';
  }
}

void write_estimator_csv(const std::string& path, const std::vector<StepRecord>& steps) {
  auto out = open_out(path);
  out << "n,eta1,eta2,eta3,eta4,etau1,etau2,etau3,eta_phi_total,eta_u_total,n_semi,n_full\n";
  for (const auto& s : steps) {
    out << s.n;
    for (double e : s.eta) out << ',' << num(e);
    for (double e : s.etau) out << ',' << num(e);
    out << ',' << num(s.eta_phi) << ',' << num(s.eta_u) << ',' << s.n_semi << ',' << s.n_full << '\n';
  }
}

void write_convergence_csv(const std::string& path, const std::vector<ConvergenceRow>& rows) {
  auto out = open_out(path);
  out << "series,stage,nodes,dofs,err_phi_eps,err_u_energy\n";
  for (const auto& r : rows) {
    out << r.series << ',' << r.stage << ',' << r.nodes << ',' << r.dofs << ',' << num(r.err_phi_eps) << ','
        << num(r.err_u_energy) << '\n';
  }
}

void write_efficiency_csv(const std::string& path, const std::vector<EfficiencyRow>& rows) {
  auto out = open_out(path);
  out << "eps,stage,nodes,eta_phi,err_phi_eps,index_robust,eta_std,err_phi_h1,index_std\n";
  for (const auto& r : rows) {
    out << num(r.eps) << ',' << r.stage << ',' << r.nodes << ',' << num(r.eta_phi) << ',' << num(r.err_phi_eps)
        << ',' << num(r.index_robust) << ',' << num(r.eta_std) << ',' << num(r.err_phi_h1) << ','
        << num(r.index_std) << '\n';
  }
}

void write_vtk(const std::string& path, const StepState& state) {
  const QuadMesh& mesh = state.phi.mesh();
  auto out = open_out(path);
  out << "# vtk DataFile Version 3.0\nphase-field step " << state.n << "\nASCII\nDATASET UNSTRUCTURED_GRID\n";
  out << "POINTS " << mesh.n_vertices() << " double\n";
  for (const auto& v : mesh.vertices()) out << num(v.x.x) << ' ' << num(v.x.y) << " 0\n";
  out << "CELLS " << mesh.n_leaves() << ' ' << 5 * mesh.n_leaves() << '\n';
  for (const auto& lf : mesh.leaves()) {
    out << "4 " << lf.corners[0] << ' ' << lf.corners[1] << ' ' << lf.corners[3] << ' ' << lf.corners[2] << '\n';
  }
  out << "CELL_TYPES " << mesh.n_leaves() << '\n';
  for (int e = 0; e < mesh.n_leaves(); ++e) out << "9\n";

  out << "POINT_DATA " << mesh.n_vertices() << '\n';
  out << "SCALARS phi double 1\nLOOKUP_TABLE default\n";
  for (int v = 0; v < mesh.n_vertices(); ++v) out << num(state.phi.vertex_value(v)) << '\n';
  if (state.u.components() == 2 && state.u.values().size() > 0) {
    out << "VECTORS u double\n";
    for (int v = 0; v < mesh.n_vertices(); ++v)
      out << num(state.u.vertex_value(v, 0)) << ' ' << num(state.u.vertex_value(v, 1)) << " 0\n";
  }
  const auto master_of = [&](int v) { return mesh.vertex(v).hanging ? -1 : mesh.vertex(v).master; };
  if (!state.classes.empty()) {
    out << "SCALARS contact_class int 1\nLOOKUP_TABLE default\n";
    for (int v = 0; v < mesh.n_vertices(); ++v) {
      const int m = master_of(v);
      out << (m < 0 ? -1 : static_cast<int>(state.classes[m])) << '\n';
    }
  }
  if (state.eta_phi) {
    out << "SCALARS eta_phi double 1\nLOOKUP_TABLE default\n";
    for (int v = 0; v < mesh.n_vertices(); ++v) {
      const int m = master_of(v);
      out << num(m < 0 ? 0.0 : state.eta_phi->node_total(m)) << '\n';
    }
  }
  if (state.eta_u) {
    out << "SCALARS eta_u double 1\nLOOKUP_TABLE default\n";
    for (int v = 0; v < mesh.n_vertices(); ++v) {
      const int m = master_of(v);
      const auto& e = *state.eta_u;
      out << num(m < 0 ? 0.0 : std::sqrt(e.eta1[m] * e.eta1[m] + e.eta2[m] * e.eta2[m] + e.eta3[m] * e.eta3[m]))
          << '\n';
    }
  }
}

}  // namespace pfadapt
