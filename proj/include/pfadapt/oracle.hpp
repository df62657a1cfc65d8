#pragma once

#include <Eigen/Core>
#include <functional>
#include <vector>

#include "pfadapt/elasticity.hpp"
#include "pfadapt/phasefield.hpp"

// Brute-force verifiers. They are slow on purpose and share as little code
// with the production kernels as practical.

namespace pfadapt::oracle {

struct KktPoint {
  Eigen::VectorXd phi;
  Eigen::VectorXd multiplier;  // b - A phi
  std::vector<char> active;
};

/// Unique KKT point of min 1/2 phi^T A phi - b^T phi subject to phi <= o,
/// found by trying every active subset. At most 16 unknowns.
KktPoint enumerate_vi(const Eigen::MatrixXd& A, const Eigen::VectorXd& b, const Eigen::VectorXd& o);

struct DenseSystem {
  Eigen::MatrixXd A;
  Eigen::VectorXd b;
};

/// Condensed matrix of (c u, v) + diffusion (grad u, grad v) and load (f, v),
/// with 6x6 Gauss points per cell and hanging vertices found geometrically.
/// Intended for meshes of at most a few hundred leaves.
DenseSystem dense_assembly(const QuadMesh& mesh, const std::function<double(int leaf, Point ref)>& reaction,
                           double diffusion, double source);

/// Same for the vector Lame operator with degradation g(leaf, ref), no load.
Eigen::MatrixXd dense_elastic_assembly(const QuadMesh& mesh, const std::function<double(int leaf, Point ref)>& g,
                                       double mu, double lambda);

/// Condensation matrix (vertices x masters) from geometric hanging detection.
Eigen::MatrixXd geometric_condensation(const QuadMesh& mesh);

enum class Norm { eps_energy, h1, u_energy };

struct ReferenceData {
  const VICoefficients* coeffs = nullptr;  // eps_energy: reaction of the reference state
  const NodalField* degradation_phi = nullptr;  // u_energy: g is taken from this field
  Material material;
};

/// Norm of (reference - coarse) on the reference mesh, Gauss order 3, where
/// the coarse field lives on a mesh refined by the reference mesh.
double reference_error(const NodalField& coarse, const NodalField& reference, Norm norm, const ReferenceData& data);

}  // namespace pfadapt::oracle
