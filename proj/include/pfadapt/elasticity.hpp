#pragma once

#include <Eigen/Core>
#include <functional>
#include <vector>

#include "pfadapt/fespace.hpp"

namespace pfadapt {

/// Lame constants mu, lambda [kN/mm^2], fracture toughness gc [kN/mm],
/// residual stiffness kappa and phase-field length scale eps [mm].
struct Material {
  double mu = 80.77;
  double lambda = 121.15;
  double gc = 2.7e-3;
  double kappa = 1e-8;
  double eps = 0.088;

  void validate() const;
};

/// Symmetric 2x2 tensor.
struct Sym2 {
  double xx = 0.0;
  double yy = 0.0;
  double xy = 0.0;

  double trace() const { return xx + yy; }
  Eigen::Matrix2d matrix() const { return (Eigen::Matrix2d() << xx, xy, xy, yy).finished(); }
};

inline Sym2 operator+(const Sym2& a, const Sym2& b) { return {a.xx + b.xx, a.yy + b.yy, a.xy + b.xy}; }
inline Sym2 operator-(const Sym2& a, const Sym2& b) { return {a.xx - b.xx, a.yy - b.yy, a.xy - b.xy}; }
inline Sym2 operator*(double s, const Sym2& a) { return {s * a.xx, s * a.yy, s * a.xy}; }
/// Full contraction A:B.
inline double ddot(const Sym2& a, const Sym2& b) { return a.xx * b.xx + a.yy * b.yy + 2.0 * a.xy * b.xy; }

struct StrainSplit {
  Sym2 plus;
  Sym2 minus;
  double d1 = 0.0;  // d1 >= d2
  double d2 = 0.0;
  Eigen::Matrix2d Q = Eigen::Matrix2d::Identity();  // columns are eigenvectors of d1, d2
};

/// Spectral split into tensile and compressive parts. Equal eigenvalues use
/// the coordinate axes.
StrainSplit split_strain(const Sym2& E);

struct StressPair {
  Sym2 plus;
  Sym2 minus;
  double driving = 0.0;  // sigma_plus : E
};

Sym2 stress(const Sym2& E, double mu, double lambda);
StressPair stress_split(const Sym2& E, double mu, double lambda);

/// sigma:E without splitting, sigma_plus:E with it.
double driving_density(const Sym2& E, const Material& mat, bool splitting);

/// (1 - kappa) phi^2 + kappa with phi clipped to [0, 1].
double degradation(double phi, double kappa);
/// d/dphi of degradation, zero outside [0, 1].
double degradation_slope(double phi, double kappa);

/// Linearized strain of a vector field inside a leaf.
Sym2 strain(const NodalField& u, int leaf, Point ref);

/// Per-quadrature-point tables on the assembly rule: degradation g(phi) and
/// the crack driving density of u.
CellTable degradation_table(const NodalField& phi, double kappa);
CellTable driving_table(const NodalField& u, const Material& mat, bool splitting);

struct DisplacementSolve {
  NodalField u;
  int iterations = 0;       // linear solves performed
  double residual = 0.0;    // final nonlinear residual relative to the first iterate (0 when unsplit)
};

/// Displacement update for fixed phi_prev. Without splitting this is one
/// linear solve; with splitting a lagged secant iteration on the split stress.
/// `solver` may be passed to reuse the symbolic factorization across steps.
DisplacementSolve solve_displacement(const DofSystem& dofs, const NodalField& phi_prev, const Dirichlet& bc,
                                     const Material& mat, bool splitting, Exec exec = Exec::parallel,
                                     SpdSolver* solver = nullptr);

/// Nonlinear residual vector of the (possibly split) momentum balance.
Eigen::VectorXd elastic_residual(const DofSystem& dofs, const NodalField& u, const NodalField& phi_prev,
                                 const Material& mat, bool splitting, Exec exec = Exec::parallel);

/// Whether a displacement component is free (natural) on a boundary side.
using NeumannPredicate = std::function<bool(int side, int component)>;

struct ElasticityEstimate {
  std::vector<double> eta1;  // per master node
  std::vector<double> eta2;
  std::vector<double> eta3;
  double total1 = 0.0;
  double total2 = 0.0;
  double total3 = 0.0;
  double total = 0.0;  // (sum_p eta1^2 + eta2^2 + eta3^2)^(1/2)
};

/// Standard residual estimator for the displacement, always with the unsplit
/// stress: h_p-weighted interior residual, h_p^(1/2)-weighted interior and
/// Neumann jumps. `order` is the Gauss order per direction.
ElasticityEstimate estimate_u(const NodalField& u, const NodalField& phi_prev, const Material& mat,
                              const NeumannPredicate& neumann, int order = 4, Exec exec = Exec::parallel);

}  // namespace pfadapt
