#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "pfadapt/oracle.hpp"
#include "support.hpp"

using namespace pfadapt;
using namespace testing;

TEST_CASE("enumerate_vi") {
  std::mt19937 rng(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Eigen::MatrixXd B(6, 6);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j) B(i, j) = u(rng);
  const Eigen::MatrixXd A = B * B.transpose() + 6.0 * Eigen::MatrixXd::Identity(6, 6);
  const Eigen::VectorXd b = Eigen::VectorXd::NullaryExpr(6, [&]() { return u(rng); });
  const Eigen::VectorXd free = A.llt().solve(b);

  SUBCASE("feasible unconstrained optimum") {
    const auto k = oracle::enumerate_vi(A, b, free.array() + 1.0);
    CHECK((k.phi - free).cwiseAbs().maxCoeff() <= 1e-12);
    for (char a : k.active) CHECK(a == 0);
    CHECK(k.multiplier.cwiseAbs().maxCoeff() <= 1e-12);
  }
  SUBCASE("huge obstacle") {
    const auto k = oracle::enumerate_vi(A, b, Eigen::VectorXd::Constant(6, 1e12));
    CHECK((k.phi - free).cwiseAbs().maxCoeff() <= 1e-12);
  }
  SUBCASE("active constraints satisfy the KKT conditions") {
    const Eigen::VectorXd o = free.array() - 0.3;
    const auto k = oracle::enumerate_vi(A, b, o);
    int n_active = 0;
    for (int i = 0; i < 6; ++i) {
      CHECK(k.phi[i] <= o[i] + 1e-12);
      if (k.active[i]) {
        ++n_active;
        CHECK(k.phi[i] == o[i]);
        CHECK(k.multiplier[i] >= -1e-12);
      } else {
        CHECK(std::abs(k.multiplier[i]) <= 1e-12);
      }
    }
    CHECK(n_active > 0);
    CHECK((k.multiplier - (b - A * k.phi)).cwiseAbs().maxCoeff() <= 1e-12);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(oracle::enumerate_vi(Eigen::MatrixXd::Identity(17, 17), Eigen::VectorXd::Zero(17),
                                         Eigen::VectorXd::Zero(17)),
                    InputError);
    // Concave energy: both phi = 0 and phi = o are KKT points.
    Eigen::MatrixXd neg(1, 1);
    neg << -1.0;
    CHECK_THROWS_AS(oracle::enumerate_vi(neg, Eigen::VectorXd::Zero(1), Eigen::VectorXd::Ones(1)), NumericalError);
  }
}

TEST_CASE("dense and sparse assembly agree on benchmark start-mesh coarsenings") {
  const Material mat;
  std::vector<MeshPtr> meshes;
  for (int n : {2, 4, 8}) meshes.push_back(unit_grid(n));
  for (int n : {2, 4, 8}) meshes.push_back(share(QuadMesh::build(Domain::l_shape, 500.0 * std::sqrt(2.0) / n)));
  for (const MeshPtr& m : meshes) {
    const DofSystem dofs(m, 1);
    const SparseMatrix A = assemble_bilinear(dofs, CellTable::filled(m->n_leaves(), mat.gc / mat.eps), mat.gc * mat.eps);
    const auto dense = oracle::dense_assembly(*m, [&](int, Point) { return mat.gc / mat.eps; }, mat.gc * mat.eps, 1.0);
    const double scale = dense.A.cwiseAbs().maxCoeff();
    CHECK((Eigen::MatrixXd(A) - dense.A).cwiseAbs().maxCoeff() <= 1e-12 * scale);

    // Vector operator with a degraded field.
    const NodalField phi = random_field(m, 5);
    const DofSystem vdofs(m, 2);
    // Stiffness columns from the (linear) internal force of unit vectors.
    const Eigen::MatrixXd Kd = oracle::dense_elastic_assembly(
        *m, [&](int e, Point r) { return degradation(phi.value(e, r), mat.kappa); }, mat.mu, mat.lambda);
    Eigen::MatrixXd Ks(vdofs.n_dofs(), vdofs.n_dofs());
    for (int j = 0; j < vdofs.n_dofs(); ++j) {
      NodalField ej(m, 2);
      ej.values()[j] = 1.0;
      Ks.col(j) = elastic_residual(vdofs, ej, phi, mat, false);
    }
    const double kscale = Kd.cwiseAbs().maxCoeff();
    CHECK((Ks - Kd).cwiseAbs().maxCoeff() <= 1e-12 * kscale);
  }
}

TEST_CASE("geometric condensation matches the mesh expansion") {
  for (unsigned seed : {1u, 2u, 3u, 4u}) {
    const MeshPtr m = hanging_mesh(3, seed, 3);
    const Eigen::MatrixXd T = oracle::geometric_condensation(*m);
    for (int v = 0; v < m->n_vertices(); ++v) {
      Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(m->n_masters());
      for (const auto& w : m->expansion(v)) row[w.master] += w.weight;
      CHECK((row - T.row(v)).cwiseAbs().maxCoeff() <= 1e-15);
    }
  }
}

TEST_CASE("reference errors") {
  const Material mat;
  const MeshPtr coarse = unit_grid(8);
  const MeshPtr fine = share(coarse->refined_uniformly(3));
  SUBCASE("identical fields") {
    const NodalField f = random_field(coarse, 1);
    const VICoefficients c = vi_coefficients_uniform(NodalField::constant(fine, 1.0), mat, 0.0);
    oracle::ReferenceData data{&c, nullptr, mat};
    CHECK(oracle::reference_error(f, interpolate_nodal(f, fine), oracle::Norm::h1, data) <= 1e-13);
    CHECK(oracle::reference_error(f, interpolate_nodal(f, fine), oracle::Norm::eps_energy, data) <= 1e-13);
  }
  SUBCASE("interpolation error of a quadratic") {
    // |x^2 - I_h x^2|_1^2 = h^2 / 3 on the unit square, and the coarse
    // interpolant is the H1 projection of the fine one along x.
    auto f = [](Point x, int) { return x.x * x.x; };
    const NodalField c = NodalField::interpolate(coarse, f);
    const NodalField r = NodalField::interpolate(fine, f);
    const double h = 1.0 / 8, hf = h / 8;
    const double expected = std::sqrt((h * h - hf * hf) / 3.0);
    CHECK(oracle::reference_error(c, r, oracle::Norm::h1, {}) == doctest::Approx(expected).epsilon(0.01));
  }
  SUBCASE("eps-energy of the constant one") {
    const VICoefficients c = vi_coefficients_uniform(NodalField::constant(fine, 1.0), mat, 0.0);
    oracle::ReferenceData data{&c, nullptr, mat};
    const double e = oracle::reference_error(NodalField::constant(coarse, 0.0), NodalField::constant(fine, 1.0),
                                             oracle::Norm::eps_energy, data);
    CHECK(e == doctest::Approx(std::sqrt(mat.gc / mat.eps)));
  }
  SUBCASE("u-energy of a uniform expansion") {
    const double delta = 1e-3;
    const NodalField u = NodalField::interpolate(fine, [&](Point x, int k) { return delta * (k ? x.y : x.x); }, 2);
    const NodalField zero(coarse, 2);
    const double full = std::sqrt(4.0 * (mat.mu + mat.lambda)) * delta;
    CHECK(oracle::reference_error(zero, u, oracle::Norm::u_energy, {nullptr, nullptr, mat}) ==
          doctest::Approx(full));
    const NodalField half = NodalField::constant(coarse, 0.5);
    const double g = (1 - mat.kappa) * 0.25 + mat.kappa;
    CHECK(oracle::reference_error(zero, u, oracle::Norm::u_energy, {nullptr, &half, mat}) ==
          doctest::Approx(std::sqrt(g) * full));
  }
  SUBCASE("non-nested meshes are rejected") {
    CHECK_THROWS_AS(oracle::reference_error(NodalField::constant(unit_grid(3), 0.0), NodalField::constant(fine, 1.0),
                                            oracle::Norm::h1, {}),
                    InputError);
  }
}
