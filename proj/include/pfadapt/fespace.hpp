#pragma once

#include <Eigen/Core>
#include <Eigen/SparseCore>
#include <array>
#include <functional>
#include <memory>
#include <vector>

#include "pfadapt/common.hpp"
#include "pfadapt/mesh.hpp"

namespace pfadapt {

using SparseMatrix = Eigen::SparseMatrix<double>;

/// Gauss-Legendre rule mapped to [0, 1].
struct GaussLine {
  std::vector<double> x;
  std::vector<double> w;
};
const GaussLine& gauss_line(int n);

/// Tensor rule on the reference square [0,1]^2; index q = i + n*j with i
/// running along x.
struct QuadRule {
  int n = 0;
  std::vector<Point> points;
  std::vector<double> weights;
};
const QuadRule& tensor_gauss(int n);

/// Order used for assembly and all per-cell coefficient tables.
inline constexpr int kAssemblyOrder = 3;

/// Bilinear shape functions on the reference square, corners LL, LR, UL, UR.
inline std::array<double, 4> q1_values(Point r) {
  return {(1 - r.x) * (1 - r.y), r.x * (1 - r.y), (1 - r.x) * r.y, r.x * r.y};
}
inline std::array<Point, 4> q1_ref_gradients(Point r) {
  return {Point{-(1 - r.y), -(1 - r.x)}, Point{1 - r.y, -r.x}, Point{-r.y, 1 - r.x}, Point{r.y, r.x}};
}

/// Reference coordinates of a physical point inside a leaf.
inline Point to_reference(const QuadMesh::Leaf& leaf, Point x) {
  return {(x.x - leaf.origin.x) / leaf.h, (x.y - leaf.origin.y) / leaf.h};
}
inline Point to_physical(const QuadMesh::Leaf& leaf, Point r) {
  return {leaf.origin.x + leaf.h * r.x, leaf.origin.y + leaf.h * r.y};
}

/// Continuous Q1 function stored by master-node values, interleaved by
/// component (dof = components * master + component).
class NodalField {
 public:
  NodalField() = default;
  NodalField(MeshPtr mesh, int components = 1);
  NodalField(MeshPtr mesh, int components, Eigen::VectorXd values);

  static NodalField constant(MeshPtr mesh, double value, int components = 1);
  /// Nodal interpolant of f(x, component).
  static NodalField interpolate(MeshPtr mesh, const std::function<double(Point, int)>& f, int components = 1);

  const QuadMesh& mesh() const { return *mesh_; }
  const MeshPtr& mesh_ptr() const { return mesh_; }
  int components() const { return components_; }
  Eigen::VectorXd& values() { return values_; }
  const Eigen::VectorXd& values() const { return values_; }

  double master_value(int master, int comp = 0) const { return values_[components_ * master + comp]; }
  double vertex_value(int vertex, int comp = 0) const;
  std::array<double, 4> corner_values(int leaf, int comp = 0) const;
  double value(int leaf, Point ref, int comp = 0) const;
  /// Physical gradient inside a leaf.
  Point gradient(int leaf, Point ref, int comp = 0) const;
  /// Evaluation at a physical point; throws InputError outside the domain.
  double at(Point x, int comp = 0) const;

 private:
  MeshPtr mesh_;
  int components_ = 1;
  Eigen::VectorXd values_;
};

/// Value of a Q1 function with the given corner values.
inline double q1_eval(const std::array<double, 4>& c, Point r) {
  const auto n = q1_values(r);
  return c[0] * n[0] + c[1] * n[1] + c[2] * n[2] + c[3] * n[3];
}
inline Point q1_gradient(const std::array<double, 4>& c, Point r, double h) {
  const auto g = q1_ref_gradients(r);
  Point out{};
  for (int k = 0; k < 4; ++k) out = out + c[k] * g[k];
  return (1.0 / h) * out;
}

/// Degree-of-freedom layout with hanging-node condensation, a fixed sparsity
/// pattern and a cell colouring for race-free parallel scatter.
class DofSystem {
 public:
  struct Entry {
    int local;  // corner * components + component
    int dof;
    double weight;
  };

  DofSystem(MeshPtr mesh, int components);

  const QuadMesh& mesh() const { return *mesh_; }
  const MeshPtr& mesh_ptr() const { return mesh_; }
  int components() const { return components_; }
  int n_dofs() const { return mesh_->n_masters() * components_; }
  int local_size() const { return 4 * components_; }

  /// Global dofs touched by a leaf with condensation weights.
  std::span<const Entry> entries(int leaf) const {
    return {entries_.data() + offset_[leaf], entries_.data() + offset_[leaf + 1]};
  }
  const SparseMatrix& pattern() const { return pattern_; }
  const std::vector<std::vector<int>>& colors() const { return colors_; }

 private:
  MeshPtr mesh_;
  int components_;
  std::vector<int> offset_;
  std::vector<Entry> entries_;
  SparseMatrix pattern_;
  std::vector<std::vector<int>> colors_;
};

using DofsPtr = std::shared_ptr<const DofSystem>;

/// Per-leaf, per-quadrature-point coefficient table for the assembly rule.
struct CellTable {
  int nq = 0;
  std::vector<double> v;  // v[leaf * nq + q]

  double operator()(int leaf, int q) const { return v[static_cast<std::size_t>(leaf) * nq + q]; }
  double& operator()(int leaf, int q) { return v[static_cast<std::size_t>(leaf) * nq + q]; }
  static CellTable filled(int n_leaves, double value) {
    constexpr int nq = kAssemblyOrder * kAssemblyOrder;
    return {nq, std::vector<double>(static_cast<std::size_t>(n_leaves) * nq, value)};
  }
};

using LocalMatrixFn = std::function<void(int leaf, Eigen::Ref<Eigen::MatrixXd> K)>;
using LocalVectorFn = std::function<void(int leaf, Eigen::Ref<Eigen::VectorXd> f)>;

/// Condensed global matrix sum_e T_e^T K_e T_e. `Exec::serial` builds it from
/// triplets; `Exec::parallel` computes local matrices with OpenMP and
/// scatters colour by colour into the fixed pattern.
SparseMatrix assemble_matrix(const DofSystem& dofs, const LocalMatrixFn& local, Exec exec = Exec::parallel);
Eigen::VectorXd assemble_vector(const DofSystem& dofs, const LocalVectorFn& local, Exec exec = Exec::parallel);

/// Matrix of (reaction u, v) + diffusion (grad u, grad v) with the reaction
/// tabulated at the assembly quadrature points. Negative coefficients are rejected.
SparseMatrix assemble_bilinear(const DofSystem& dofs, const CellTable& reaction, double diffusion,
                               Exec exec = Exec::parallel);
/// Load vector (f, v) for a source tabulated at the assembly quadrature points.
Eigen::VectorXd assemble_source(const DofSystem& dofs, const CellTable& source, Exec exec = Exec::parallel);

/// Prescribed dof values.
struct Dirichlet {
  std::vector<int> dofs;
  std::vector<double> values;

  void add(int dof, double value) {
    dofs.push_back(dof);
    values.push_back(value);
  }
};

/// Symmetric elimination: known columns move to the right-hand side, the
/// constrained rows/columns are zeroed except the diagonal, and the right-hand
/// side is set so that the solve returns the prescribed values. The sparsity
/// pattern is left unchanged.
void apply_dirichlet(SparseMatrix& A, Eigen::VectorXd& b, const Dirichlet& bc);

/// Sparse SPD direct solver that reuses the symbolic analysis while the
/// pattern stays fixed.
class SpdSolver {
 public:
  SpdSolver();
  ~SpdSolver();
  SpdSolver(SpdSolver&&) noexcept;
  SpdSolver& operator=(SpdSolver&&) noexcept;

  void factorize(const SparseMatrix& A);
  /// Solves with one step of iterative refinement if needed; throws
  /// NumericalError when the relative residual stays above `tol`.
  Eigen::VectorXd solve(const Eigen::VectorXd& b, double tol = 1e-10) const;

  static const char* backend();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

Eigen::VectorXd solve_spd(const SparseMatrix& A, const Eigen::VectorXd& b, double tol = 1e-10);

/// Solves A x = b on the free rows with x = g on the active rows, for a
/// sequence of active sets on the same symmetric positive definite A. With
/// CHOLMOD the LDL' factor is carried from one active set to the next by row
/// deletions and additions; otherwise every call refactorizes.
class ActiveSetSolver {
 public:
  explicit ActiveSetSolver(const SparseMatrix& A);
  ~ActiveSetSolver();
  ActiveSetSolver(const ActiveSetSolver&) = delete;
  ActiveSetSolver& operator=(const ActiveSetSolver&) = delete;

  Eigen::VectorXd solve(const std::vector<char>& active, const Eigen::VectorXd& b, const Eigen::VectorXd& g,
                        double tol = 1e-10);

  int factorizations() const;
  long row_updates() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Transfers a field to a mesh that refines its own; exact for Q1 nesting.
NodalField interpolate_nodal(const NodalField& field, const MeshPtr& fine);

}  // namespace pfadapt
