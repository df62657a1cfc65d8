// Serial reference vs OpenMP kernels on a loaded tension state.
// Run with OMP_NUM_THREADS=<n>; the argument selects serial (0) or parallel (1).
#include <benchmark/benchmark.h>

#include <cmath>

#include "pfadapt/sim.hpp"

using namespace pfadapt;

namespace {

struct State {
  Config cfg;
  MeshPtr mesh;
  NodalField phi_prev;
  NodalField u;
  VICoefficients coeffs;
  VISolution sol;
  std::vector<ContactClass> classes;
  ConstrainingForce force;
  NeumannPredicate neumann;
};

const State& state() {
  static const State s = [] {
    State s;
    s.cfg = benchmark_defaults(Benchmark::tension);
    s.mesh = share(QuadMesh::build(Domain::unit_square, std::sqrt(2.0) / 128));
    s.phi_prev = initial_phase_field(Benchmark::tension, s.mesh);
    const DofSystem du(s.mesh, 2), dp(s.mesh, 1);
    s.u = solve_displacement(du, s.phi_prev, displacement_bc(s.cfg, *s.mesh, 300), s.cfg.material, false).u;
    s.coeffs = vi_coefficients(s.u, s.phi_prev, s.cfg.material, false);
    s.sol = solve_vi(dp, s.coeffs);
    s.classes = classify_contact(s.sol.phi, s.coeffs);
    s.force = constraining_force(dp, s.sol.phi, s.coeffs);
    s.neumann = neumann_sides(s.cfg, *s.mesh);
    return s;
  }();
  return s;
}

Exec exec_of(const benchmark::State& b) { return b.range(0) ? Exec::parallel : Exec::serial; }

void BM_AssemblePhaseOperator(benchmark::State& b) {
  const State& s = state();
  const DofSystem dp(s.mesh, 1);
  const CellTable reaction = s.coeffs.reaction_table();
  for (auto _ : b) benchmark::DoNotOptimize(assemble_bilinear(dp, reaction, s.coeffs.diffusion(), exec_of(b)));
}

void BM_ElasticResidual(benchmark::State& b) {
  const State& s = state();
  const DofSystem du(s.mesh, 2);
  for (auto _ : b)
    benchmark::DoNotOptimize(elastic_residual(du, s.u, s.phi_prev, s.cfg.material, true, exec_of(b)));
}

void BM_EstimatePhi(benchmark::State& b) {
  const State& s = state();
  for (auto _ : b)
    benchmark::DoNotOptimize(estimate_phi(s.sol.phi, s.coeffs, s.classes, s.force, 4, exec_of(b)));
}

void BM_EstimateU(benchmark::State& b) {
  const State& s = state();
  for (auto _ : b)
    benchmark::DoNotOptimize(estimate_u(s.u, s.phi_prev, s.cfg.material, s.neumann, 4, exec_of(b)));
}

}  // namespace

BENCHMARK(BM_AssemblePhaseOperator)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ElasticResidual)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_EstimatePhi)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_EstimateU)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
