#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "pfadapt/elasticity.hpp"
#include "pfadapt/fespace.hpp"

namespace pfadapt {

/// Data of one phase-field obstacle problem: reaction gc/eps + (1-kappa) *
/// driving, diffusion gc*eps, source gc/eps, upper obstacle.
struct VICoefficients {
  double gc = 2.7e-3;
  double eps = 0.088;
  double kappa = 1e-8;
  MeshPtr mesh;  // mesh on which `driving` is indexed
  std::function<double(int leaf, Point ref)> driving;  // crack driving density, >= 0; empty means zero
  NodalField obstacle;

  double source() const { return gc / eps; }
  double diffusion() const { return gc * eps; }
  double reaction(int leaf, Point ref) const;
  /// Reaction at a physical point; intended for cell-interior points.
  double reaction_at(Point x) const;
  CellTable reaction_table() const;
};

/// Coefficients driven by a displacement field (sigma:E or sigma_plus:E).
VICoefficients vi_coefficients(const NodalField& u, const NodalField& obstacle, const Material& mat, bool splitting);
/// Coefficients with a spatially constant driving density.
VICoefficients vi_coefficients_uniform(const NodalField& obstacle, const Material& mat, double driving);

struct VISolution {
  NodalField phi;
  Eigen::VectorXd multiplier;  // b - A phi per master node
  std::vector<char> active;
  int iterations = 0;
};

struct VISolverOptions {
  int max_iterations = 500;  // the active front moves about one node layer per iteration
  double penalty_scale = 100.0;  // active-set penalty in units of the operator diagonal
};

/// Primal-dual active set solve of the complementarity system
/// phi <= o, b - A phi >= 0, (o - phi)(b - A phi) = 0.
/// `initial_active` warm-starts the iteration.
VISolution solve_vi(const DofSystem& dofs, const VICoefficients& coeffs, const std::vector<char>* initial_active = nullptr,
                    Exec exec = Exec::parallel, const VISolverOptions& options = {});

/// max_p |min(o_p - phi_p, lambda_p)|.
double complementarity_residual(const VISolution& sol, const NodalField& obstacle);

enum class ContactClass : std::uint8_t { none, semi, full };

/// Cell residual gc/eps + gc eps lap(phi) - reaction * phi at a reference point.
double element_residual(const NodalField& phi, const VICoefficients& coeffs, int leaf, Point ref);

/// Gradient jump (grad phi|plus - grad phi|minus) . n on an interior side, or
/// the outward normal derivative on a boundary side, at parameter t along it.
double normal_jump(const NodalField& phi, const QuadMesh::Side& side, double t);

struct ConstrainingForce {
  Eigen::VectorXd algebraic;         // <Lambda, phi_p> = (b - A phi)_p
  Eigen::VectorXd integral;          // the same via residual, jumps and boundary flux
  Eigen::VectorXd basis_integral;    // int_{omega_p} phi_p
  Eigen::VectorXd subpatch_integral; // int_{subpatch} phi_p
  Eigen::VectorXd nodal;             // s_p = algebraic / basis_integral
  double max_deviation = 0.0;        // max_p |algebraic - integral|
};

/// Both representations of the discrete constraining force; throws
/// NumericalError when they disagree by more than `tol` (absolute).
ConstrainingForce constraining_force(const DofSystem& dofs, const NodalField& phi, const VICoefficients& coeffs,
                                     Exec exec = Exec::parallel, double tol = 1e-9);

std::vector<ContactClass> classify_contact(const NodalField& phi, const VICoefficients& coeffs, double tol = 1e-10);

struct PhaseFieldEstimate {
  std::vector<double> eta1, eta2, eta3, eta4;  // per master node
  std::vector<double> alpha;                   // min reaction over the patch
  std::vector<double> weight;                  // min(h_p / sqrt(gc eps), alpha^(-1/2))
  double total1 = 0.0, total2 = 0.0, total3 = 0.0, total4 = 0.0;
  double total = 0.0;  // sum of the four root-sum-squares
  int n_semi = 0;
  int n_full = 0;

  double node_total(int m) const {
    return std::sqrt(eta1[m] * eta1[m] + eta2[m] * eta2[m] + eta3[m] * eta3[m] + eta4[m] * eta4[m]);
  }
};

/// Robust estimator for the obstacle problem. `order` is the Gauss order per
/// direction for the norms; the reaction minimum is taken over the assembly
/// quadrature points.
PhaseFieldEstimate estimate_phi(const NodalField& phi, const VICoefficients& coeffs,
                                const std::vector<ContactClass>& classes, const ConstrainingForce& force,
                                int order = 4, Exec exec = Exec::parallel);

/// Residual estimator with plain h-weights, measured against the H1 error.
struct StandardEstimate {
  std::vector<double> eta;  // per master node, residual part
  double total_residual = 0.0;
  double total = 0.0;  // residual part plus the contact term
};
StandardEstimate estimate_phi_standard(const NodalField& phi, const VICoefficients& coeffs,
                                       const std::vector<ContactClass>& classes, const ConstrainingForce& force,
                                       int order = 4, Exec exec = Exec::parallel);

/// Unconstrained robust residual estimator evaluated node by node straight
/// from its definition; equals estimate_phi when nothing is in contact.
double robust_residual_estimator(const NodalField& phi, const VICoefficients& coeffs, int order = 4);

/// (gc eps |grad v|^2 + c v^2)^(1/2) over v's mesh with the coefficient's reaction.
double energy_norm(const NodalField& v, const VICoefficients& coeffs, int order = 4);

/// Mean of psi against phi_p over the subpatch, normalised by the mean of phi_p.
double subpatch_mean(const QuadMesh& mesh, int master, const std::function<double(Point)>& psi, int refine_levels = 0);

struct GalerkinCheck {
  double direct = 0.0;
  double representation = 0.0;
  double difference() const { return std::abs(direct - representation); }
};

/// Evaluates the Galerkin functional at a probe psi (a Q1 field on a
/// refinement of phi's mesh) from its definition and from the patch-wise
/// residual representation.
GalerkinCheck galerkin_functional_check(const NodalField& phi, const VICoefficients& coeffs,
                                        const std::vector<ContactClass>& classes, const NodalField& psi);

}  // namespace pfadapt
