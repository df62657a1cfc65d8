#pragma once

// Small helpers shared by the test programs.

#include <cmath>
#include <functional>
#include <random>

#include "pfadapt/fespace.hpp"
#include "pfadapt/mesh.hpp"
#include "pfadapt/oracle.hpp"
#include "pfadapt/phasefield.hpp"

namespace testing {

using namespace pfadapt;

inline MeshPtr unit_grid(int n) { return share(QuadMesh::build(Domain::unit_square, std::sqrt(2.0) / n)); }

/// Unit-square grid with a few random leaves refined once and then again, so
/// the result has hanging nodes on two levels.
inline MeshPtr hanging_mesh(int n, unsigned seed, int marks = 2) {
  QuadMesh m = QuadMesh::build(Domain::unit_square, std::sqrt(2.0) / n);
  std::mt19937 rng(seed);
  for (int pass = 0; pass < 2; ++pass) {
    std::uniform_int_distribution<int> pick(0, m.n_leaves() - 1);
    std::vector<int> marked;
    for (int k = 0; k < marks; ++k) marked.push_back(pick(rng));
    m = m.refined(marked);
  }
  return share(std::move(m));
}

/// Function tabulated at the physical assembly quadrature points.
inline CellTable tabulate(const QuadMesh& mesh, const std::function<double(Point)>& f) {
  CellTable t = CellTable::filled(mesh.n_leaves(), 0.0);
  const QuadRule& rule = tensor_gauss(kAssemblyOrder);
  for (int e = 0; e < mesh.n_leaves(); ++e)
    for (int q = 0; q < t.nq; ++q) t(e, q) = f(to_physical(mesh.leaf(e), rule.points[q]));
  return t;
}

/// Scalar Dirichlet data g on every boundary master node.
inline Dirichlet boundary_data(const QuadMesh& mesh, const std::function<double(Point)>& g) {
  Dirichlet bc;
  for (int m = 0; m < mesh.n_masters(); ++m) {
    const auto& v = mesh.vertex(mesh.master_vertex(m));
    if (v.on_boundary) bc.add(m, g(v.x));
  }
  return bc;
}

/// Integral of f(leaf, ref, x) over the mesh with an n x n Gauss rule per leaf.
inline double integrate(const QuadMesh& mesh, int n, const std::function<double(int, Point, Point)>& f) {
  const QuadRule& rule = tensor_gauss(n);
  double sum = 0.0;
  for (int e = 0; e < mesh.n_leaves(); ++e) {
    const auto& lf = mesh.leaf(e);
    for (std::size_t q = 0; q < rule.points.size(); ++q)
      sum += rule.weights[q] * lf.h * lf.h * f(e, rule.points[q], to_physical(lf, rule.points[q]));
  }
  return sum;
}

inline NodalField random_field(const MeshPtr& mesh, unsigned seed, int components = 1, double lo = 0.0,
                               double hi = 1.0) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  NodalField f(mesh, components);
  for (auto& v : f.values()) v = u(rng);
  return f;
}

/// Small obstacle problem with a random mesh (at most 13 master nodes),
/// random cellwise constant driving density, random obstacle and length scale.
struct ViInstance {
  MeshPtr mesh;
  VICoefficients coeffs;
};

inline ViInstance random_vi_instance(unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ViInstance inst;
  for (;;) {
    QuadMesh m = QuadMesh::build(Domain::unit_square, std::sqrt(2.0) / (1 + rng() % 2));
    const int passes = static_cast<int>(rng() % 3);
    for (int k = 0; k < passes; ++k) {
      const int marked[] = {static_cast<int>(rng() % m.n_leaves())};
      m = m.refined(marked);
    }
    if (m.n_masters() <= 13 && m.n_masters() >= 4) {
      inst.mesh = share(std::move(m));
      break;
    }
  }
  Material mat;
  mat.eps = 0.05 + 0.45 * u(rng);
  std::vector<double> drive(inst.mesh->n_leaves());
  for (double& d : drive) d = 3.0 * mat.gc / mat.eps * u(rng);
  NodalField o(inst.mesh, 1);
  for (auto& v : o.values()) v = 0.2 + 0.8 * u(rng);
  inst.coeffs = vi_coefficients_uniform(o, mat, 0.0);
  inst.coeffs.driving = [drive](int leaf, Point) { return drive[leaf]; };
  return inst;
}

/// Dense reference matrix and load of an obstacle problem.
inline oracle::DenseSystem dense_vi_system(const VICoefficients& c) {
  return oracle::dense_assembly(*c.mesh, [&](int e, Point r) { return c.reaction(e, r); }, c.diffusion(), c.source());
}

}  // namespace testing
