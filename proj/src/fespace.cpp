#include "pfadapt/fespace.hpp"

#include <Eigen/SparseCholesky>
#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <sstream>

#ifdef PFADAPT_HAVE_CHOLMOD
#include <Eigen/CholmodSupport>
#endif

namespace pfadapt {

// ---------------------------------------------------------------- quadrature

namespace {

GaussLine make_gauss(int n) {
  GaussLine g;
  g.x.resize(n);
  g.w.resize(n);
  for (int i = 0; i < n; ++i) {
    double z = std::cos(M_PI * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = z;
      for (int k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      dp = n * (z * p1 - p0) / (z * z - 1.0);
      const double dz = p1 / dp;
      z -= dz;
      if (std::abs(dz) < 1e-16) break;
    }
    double p0 = 1.0, p1 = z;
    for (int k = 2; k <= n; ++k) {
      const double p2 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p0) / k;
      p0 = p1;
      p1 = p2;
    }
    dp = n * (z * p1 - p0) / (z * z - 1.0);
    g.x[n - 1 - i] = 0.5 * (z + 1.0);
    g.w[n - 1 - i] = 1.0 / ((1.0 - z * z) * dp * dp);  // 2/((1-z^2)P'^2) halved for [0,1]
  }
  return g;
}

}  // namespace

const GaussLine& gauss_line(int n) {
  if (n < 1 || n > 16) throw InputError("Gauss rule order must be in [1, 16]");
  static std::map<int, GaussLine> cache;
  static std::mutex mtx;
  std::lock_guard lock(mtx);
  auto it = cache.find(n);
  if (it == cache.end()) it = cache.emplace(n, make_gauss(n)).first;
  return it->second;
}

const QuadRule& tensor_gauss(int n) {
  static std::map<int, QuadRule> cache;
  static std::mutex mtx;
  const GaussLine& g = gauss_line(n);
  std::lock_guard lock(mtx);
  auto it = cache.find(n);
  if (it == cache.end()) {
    QuadRule r;
    r.n = n;
    for (int j = 0; j < n; ++j) {
      for (int i = 0; i < n; ++i) {
        r.points.push_back({g.x[i], g.x[j]});
        r.weights.push_back(g.w[i] * g.w[j]);
      }
    }
    it = cache.emplace(n, std::move(r)).first;
  }
  return it->second;
}

// ---------------------------------------------------------------- fields

NodalField::NodalField(MeshPtr mesh, int components)
    : mesh_(std::move(mesh)), components_(components),
      values_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(mesh_->n_masters()) * components)) {}

NodalField::NodalField(MeshPtr mesh, int components, Eigen::VectorXd values)
    : mesh_(std::move(mesh)), components_(components), values_(std::move(values)) {
  if (values_.size() != static_cast<Eigen::Index>(mesh_->n_masters()) * components_) {
    throw InputError("nodal field size does not match the mesh");
  }
}

NodalField NodalField::constant(MeshPtr mesh, double value, int components) {
  NodalField f(std::move(mesh), components);
  f.values_.setConstant(value);
  return f;
}

NodalField NodalField::interpolate(MeshPtr mesh, const std::function<double(Point, int)>& fn, int components) {
  NodalField f(std::move(mesh), components);
  for (int m = 0; m < f.mesh().n_masters(); ++m) {
    const Point x = f.mesh().vertex(f.mesh().master_vertex(m)).x;
    for (int c = 0; c < components; ++c) f.values_[components * m + c] = fn(x, c);
  }
  return f;
}

double NodalField::vertex_value(int vertex, int comp) const {
  double v = 0.0;
  for (const auto& w : mesh_->expansion(vertex)) v += w.weight * values_[components_ * w.master + comp];
  return v;
}

std::array<double, 4> NodalField::corner_values(int leaf, int comp) const {
  const auto& corners = mesh_->leaf(leaf).corners;
  return {vertex_value(corners[0], comp), vertex_value(corners[1], comp), vertex_value(corners[2], comp),
          vertex_value(corners[3], comp)};
}

double NodalField::value(int leaf, Point ref, int comp) const { return q1_eval(corner_values(leaf, comp), ref); }

Point NodalField::gradient(int leaf, Point ref, int comp) const {
  return q1_gradient(corner_values(leaf, comp), ref, mesh_->leaf(leaf).h);
}

double NodalField::at(Point x, int comp) const {
  const int leaf = mesh_->locate(x);
  if (leaf < 0) throw InputError("evaluation point outside the domain");
  return value(leaf, to_reference(mesh_->leaf(leaf), x), comp);
}

NodalField interpolate_nodal(const NodalField& field, const MeshPtr& fine) {
  if (!field.mesh().is_refined_by(*fine)) throw InputError("target mesh does not refine the field's mesh");
  NodalField out(fine, field.components());
  const QuadMesh& coarse = field.mesh();
  const double unit = static_cast<double>(std::int64_t{1} << kMaxLevel);
  for (int m = 0; m < fine->n_masters(); ++m) {
    const auto& v = fine->vertex(fine->master_vertex(m));
    const int leaf = coarse.locate_integer(v.ix, v.iy);
    const auto& lf = coarse.leaf(leaf);
    // Exact reference coordinates from the integer lattice.
    const double size = unit / static_cast<double>(std::int64_t{1} << lf.level);
    const double ox = std::round(lf.origin.x / coarse.roots().edge * unit);
    const double oy = std::round(lf.origin.y / coarse.roots().edge * unit);
    const Point ref{(static_cast<double>(v.ix) - ox) / size, (static_cast<double>(v.iy) - oy) / size};
    for (int c = 0; c < field.components(); ++c) out.values()[field.components() * m + c] = field.value(leaf, ref, c);
  }
  return out;
}

// ---------------------------------------------------------------- dof layout

DofSystem::DofSystem(MeshPtr mesh, int components) : mesh_(std::move(mesh)), components_(components) {
  if (components < 1 || components > 2) throw InputError("only scalar and 2-vector fields are supported");
  const QuadMesh& m = *mesh_;
  offset_.assign(m.n_leaves() + 1, 0);
  for (int e = 0; e < m.n_leaves(); ++e) {
    const auto& corners = m.leaf(e).corners;
    for (int k = 0; k < 4; ++k) {
      for (const auto& w : m.expansion(corners[k])) {
        for (int c = 0; c < components; ++c) entries_.push_back({k * components + c, components * w.master + c, w.weight});
      }
    }
    offset_[e + 1] = static_cast<int>(entries_.size());
  }

  std::vector<Eigen::Triplet<double>> trip;
  std::vector<int> touched;
  for (int e = 0; e < m.n_leaves(); ++e) {
    touched.clear();
    for (const auto& en : entries(e)) touched.push_back(en.dof);
    std::sort(touched.begin(), touched.end());
    touched.erase(std::unique(touched.begin(), touched.end()), touched.end());
    for (int i : touched)
      for (int j : touched) trip.emplace_back(i, j, 0.0);
  }
  pattern_.resize(n_dofs(), n_dofs());
  pattern_.setFromTriplets(trip.begin(), trip.end());
  pattern_.makeCompressed();

  // Greedy colouring: leaves of one colour touch disjoint dof sets.
  std::vector<std::vector<int>> dof_colors(n_dofs());
  for (int e = 0; e < m.n_leaves(); ++e) {
    touched.clear();
    for (const auto& en : entries(e)) touched.push_back(en.dof);
    int color = 0;
    for (;; ++color) {
      bool clash = false;
      for (int d : touched) {
        const auto& used = dof_colors[d];
        if (std::find(used.begin(), used.end(), color) != used.end()) {
          clash = true;
          break;
        }
      }
      if (!clash) break;
    }
    for (int d : touched) {
      auto& used = dof_colors[d];
      if (std::find(used.begin(), used.end(), color) == used.end()) used.push_back(color);
    }
    if (static_cast<int>(colors_.size()) <= color) colors_.resize(color + 1);
    colors_[color].push_back(e);
  }
}

// ---------------------------------------------------------------- assembly

namespace {

void scatter_into(SparseMatrix& A, const DofSystem& dofs, int leaf, const Eigen::MatrixXd& K) {
  const auto ents = dofs.entries(leaf);
  const int* inner = A.innerIndexPtr();
  const int* outer = A.outerIndexPtr();
  double* val = A.valuePtr();
  for (const auto& ej : ents) {
    const int* begin = inner + outer[ej.dof];
    const int* end = inner + outer[ej.dof + 1];
    for (const auto& ei : ents) {
      const double v = ei.weight * ej.weight * K(ei.local, ej.local);
      if (v == 0.0) continue;
      const int* pos = std::lower_bound(begin, end, ei.dof);
      val[pos - inner] += v;
    }
  }
}

}  // namespace

SparseMatrix assemble_matrix(const DofSystem& dofs, const LocalMatrixFn& local, Exec exec) {
  const int n = dofs.local_size();
  const int n_leaves = dofs.mesh().n_leaves();
  if (exec == Exec::serial) {
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(static_cast<std::size_t>(n_leaves) * n * n);
    Eigen::MatrixXd K(n, n);
    for (int e = 0; e < n_leaves; ++e) {
      K.setZero();
      local(e, K);
      const auto ents = dofs.entries(e);
      for (const auto& ei : ents)
        for (const auto& ej : ents) trip.emplace_back(ei.dof, ej.dof, ei.weight * ej.weight * K(ei.local, ej.local));
    }
    SparseMatrix A(dofs.n_dofs(), dofs.n_dofs());
    A.setFromTriplets(trip.begin(), trip.end());
    A.makeCompressed();
    return A;
  }
  SparseMatrix A = dofs.pattern();
  for (const auto& color : dofs.colors()) {
    const int count = static_cast<int>(color.size());
#pragma omp parallel
    {
      Eigen::MatrixXd K(n, n);
#pragma omp for schedule(static)
      for (int i = 0; i < count; ++i) {
        K.setZero();
        local(color[i], K);
        scatter_into(A, dofs, color[i], K);
      }
    }
  }
  return A;
}

Eigen::VectorXd assemble_vector(const DofSystem& dofs, const LocalVectorFn& local, Exec exec) {
  const int n = dofs.local_size();
  Eigen::VectorXd b = Eigen::VectorXd::Zero(dofs.n_dofs());
  if (exec == Exec::serial) {
    Eigen::VectorXd f(n);
    for (int e = 0; e < dofs.mesh().n_leaves(); ++e) {
      f.setZero();
      local(e, f);
      for (const auto& en : dofs.entries(e)) b[en.dof] += en.weight * f[en.local];
    }
    return b;
  }
  for (const auto& color : dofs.colors()) {
    const int count = static_cast<int>(color.size());
#pragma omp parallel
    {
      Eigen::VectorXd f(n);
#pragma omp for schedule(static)
      for (int i = 0; i < count; ++i) {
        f.setZero();
        local(color[i], f);
        for (const auto& en : dofs.entries(color[i])) b[en.dof] += en.weight * f[en.local];
      }
    }
  }
  return b;
}

SparseMatrix assemble_bilinear(const DofSystem& dofs, const CellTable& reaction, double diffusion, Exec exec) {
  if (dofs.components() != 1) throw InputError("reaction-diffusion assembly needs a scalar dof system");
  const QuadRule& rule = tensor_gauss(kAssemblyOrder);
  if (reaction.nq != static_cast<int>(rule.points.size()) ||
      reaction.v.size() != static_cast<std::size_t>(dofs.mesh().n_leaves()) * reaction.nq) {
    throw InputError("reaction table does not match the mesh");
  }
  if (!(diffusion >= 0.0)) throw InputError("diffusion coefficient must be nonnegative");
  for (double c : reaction.v) {
    if (!(c >= 0.0)) throw InputError("reaction coefficient must be nonnegative at every quadrature point");
  }
  const QuadMesh& mesh = dofs.mesh();
  return assemble_matrix(
      dofs,
      [&](int e, Eigen::Ref<Eigen::MatrixXd> K) {
        const double h = mesh.leaf(e).h;
        const double area = h * h;
        for (int q = 0; q < static_cast<int>(rule.points.size()); ++q) {
          const auto N = q1_values(rule.points[q]);
          const auto G = q1_ref_gradients(rule.points[q]);
          const double wc = rule.weights[q] * area * reaction(e, q);
          const double wd = rule.weights[q] * diffusion;  // h^2 * (1/h)^2
          for (int a = 0; a < 4; ++a)
            for (int b = 0; b < 4; ++b) K(a, b) += wc * N[a] * N[b] + wd * dot(G[a], G[b]);
        }
      },
      exec);
}

Eigen::VectorXd assemble_source(const DofSystem& dofs, const CellTable& source, Exec exec) {
  if (dofs.components() != 1) throw InputError("source assembly needs a scalar dof system");
  const QuadRule& rule = tensor_gauss(kAssemblyOrder);
  if (source.nq != static_cast<int>(rule.points.size()) ||
      source.v.size() != static_cast<std::size_t>(dofs.mesh().n_leaves()) * source.nq) {
    throw InputError("source table does not match the mesh");
  }
  const QuadMesh& mesh = dofs.mesh();
  return assemble_vector(
      dofs,
      [&](int e, Eigen::Ref<Eigen::VectorXd> f) {
        const double area = mesh.leaf(e).h * mesh.leaf(e).h;
        for (int q = 0; q < static_cast<int>(rule.points.size()); ++q) {
          const auto N = q1_values(rule.points[q]);
          const double w = rule.weights[q] * area * source(e, q);
          for (int a = 0; a < 4; ++a) f[a] += w * N[a];
        }
      },
      exec);
}

// ---------------------------------------------------------------- boundary data

void apply_dirichlet(SparseMatrix& A, Eigen::VectorXd& b, const Dirichlet& bc) {
  if (bc.dofs.size() != bc.values.size()) throw InputError("Dirichlet dofs and values differ in length");
  const Eigen::Index n = A.rows();
  std::vector<char> fixed(n, 0);
  Eigen::VectorXd g = Eigen::VectorXd::Zero(n);
  for (std::size_t i = 0; i < bc.dofs.size(); ++i) {
    const int d = bc.dofs[i];
    if (d < 0 || d >= n) throw InputError("Dirichlet dof out of range");
    fixed[d] = 1;
    g[d] = bc.values[i];
  }
  Eigen::VectorXd diag = Eigen::VectorXd::Zero(n);
  for (Eigen::Index j = 0; j < A.outerSize(); ++j) {
    for (SparseMatrix::InnerIterator it(A, j); it; ++it) {
      const auto i = it.row();
      if (i == j) {
        diag[i] = it.value();
        continue;
      }
      if (fixed[j] && !fixed[i]) b[i] -= it.value() * g[j];
      if (fixed[i] || fixed[j]) it.valueRef() = 0.0;
    }
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!fixed[i]) continue;
    if (!(diag[i] > 0.0)) {
      A.coeffRef(i, i) = 1.0;
      diag[i] = 1.0;
    }
    b[i] = diag[i] * g[i];
  }
}

// ---------------------------------------------------------------- solver

#ifdef PFADAPT_HAVE_CHOLMOD
namespace {

/// Some BLAS builds pick broken dense kernels on some CPUs, which makes the
/// supernodal factorization report a definite matrix as indefinite. Probe
/// once on a banded diagonally dominant matrix before trusting it.
bool supernodal_usable() {
  static const bool ok = [] {
    const int n = 400;
    std::vector<Eigen::Triplet<double>> t;
    for (int i = 0; i < n; ++i) {
      t.emplace_back(i, i, 4.0);
      for (int off : {1, 20}) {
        if (i + off < n) {
          t.emplace_back(i + off, i, -1.0);
          t.emplace_back(i, i + off, -1.0);
        }
      }
    }
    SparseMatrix A(n, n);
    A.setFromTriplets(t.begin(), t.end());
    Eigen::CholmodSupernodalLLT<SparseMatrix, Eigen::Lower> chol;
    chol.cholmod().print = 0;
    chol.compute(A);
    if (chol.info() != Eigen::Success) return false;
    const Eigen::VectorXd b = Eigen::VectorXd::LinSpaced(n, -1.0, 1.0);
    const Eigen::VectorXd x = chol.solve(b);
    return std::isfinite(x.sum()) && (A * x - b).norm() <= 1e-12 * b.norm();
  }();
  return ok;
}

}  // namespace
#endif

struct SpdSolver::Impl {
#ifdef PFADAPT_HAVE_CHOLMOD
  Eigen::CholmodDecomposition<SparseMatrix, Eigen::Lower> chol;
  bool supernodal = false;
#else
  Eigen::SimplicialLDLT<SparseMatrix, Eigen::Lower> chol;
#endif
  SparseMatrix A;
  std::vector<int> outer, inner;
  bool analyzed = false;
};

SpdSolver::SpdSolver() : impl_(std::make_unique<Impl>()) {
#ifdef PFADAPT_HAVE_CHOLMOD
  impl_->chol.cholmod().print = 0;  // failures surface as NumericalError
  impl_->supernodal = supernodal_usable();
  impl_->chol.setMode(impl_->supernodal ? Eigen::CholmodSupernodalLLt : Eigen::CholmodSimplicialLLt);
#endif
}
SpdSolver::~SpdSolver() = default;
SpdSolver::SpdSolver(SpdSolver&&) noexcept = default;
SpdSolver& SpdSolver::operator=(SpdSolver&&) noexcept = default;

const char* SpdSolver::backend() {
#ifdef PFADAPT_HAVE_CHOLMOD
  return supernodal_usable() ? "cholmod-supernodal" : "cholmod-simplicial";
#else
  return "eigen-simplicial-ldlt";
#endif
}

void SpdSolver::factorize(const SparseMatrix& A) {
  Impl& s = *impl_;
  s.A = A;
  s.A.makeCompressed();
  const bool same = s.analyzed && s.outer.size() == static_cast<std::size_t>(s.A.outerSize() + 1) &&
                    s.inner.size() == static_cast<std::size_t>(s.A.nonZeros()) &&
                    std::equal(s.outer.begin(), s.outer.end(), s.A.outerIndexPtr()) &&
                    std::equal(s.inner.begin(), s.inner.end(), s.A.innerIndexPtr());
  if (!same) {
    s.chol.analyzePattern(s.A);
    s.outer.assign(s.A.outerIndexPtr(), s.A.outerIndexPtr() + s.A.outerSize() + 1);
    s.inner.assign(s.A.innerIndexPtr(), s.A.innerIndexPtr() + s.A.nonZeros());
    s.analyzed = true;
  }
  s.chol.factorize(s.A);
#ifdef PFADAPT_HAVE_CHOLMOD
  if (s.chol.info() != Eigen::Success && s.supernodal) {
    // Second opinion without the dense kernels.
    s.supernodal = false;
    s.chol.setMode(Eigen::CholmodSimplicialLLt);
    s.chol.analyzePattern(s.A);
    s.chol.factorize(s.A);
  }
#endif
  if (s.chol.info() != Eigen::Success) {
    s.analyzed = false;
    throw NumericalError("sparse Cholesky factorization failed (matrix not positive definite?)");
  }
}

Eigen::VectorXd SpdSolver::solve(const Eigen::VectorXd& b, double tol) const {
  const Impl& s = *impl_;
  if (!s.analyzed) throw NumericalError("solve called before factorize");
  const double bnorm = b.norm();
  if (bnorm == 0.0) return Eigen::VectorXd::Zero(b.size());
  Eigen::VectorXd x = s.chol.solve(b);
  Eigen::VectorXd r = b - s.A * x;
  double rel = r.norm() / bnorm;
  for (int refine = 0; refine < 3 && rel > tol; ++refine) {
    x += s.chol.solve(r);
    r = b - s.A * x;
    rel = r.norm() / bnorm;
  }
  if (!std::isfinite(rel) || rel > tol) {
    std::ostringstream msg;
    msg << "linear solve reached relative residual " << rel << " (required " << tol << ")";
    throw NumericalError(msg.str());
  }
  return x;
}

Eigen::VectorXd solve_spd(const SparseMatrix& A, const Eigen::VectorXd& b, double tol) {
  SpdSolver solver;
  solver.factorize(A);
  return solver.solve(b, tol);
}

// ---------------------------------------------------------------- active-set solver

namespace {

/// K = A with the active rows and columns replaced by identity rows; the
/// pattern of A is kept so a factor of K has room for every later K.
SparseMatrix eliminated(const SparseMatrix& A, const std::vector<char>& active) {
  SparseMatrix K = A;
  for (int j = 0; j < K.outerSize(); ++j) {
    for (SparseMatrix::InnerIterator it(K, j); it; ++it) {
      const int i = static_cast<int>(it.row());
      if (i == j) {
        if (active[i]) it.valueRef() = 1.0;
      } else if (active[i] || active[j]) {
        it.valueRef() = 0.0;
      }
    }
  }
  return K;
}

/// Right-hand side of the eliminated system and its residual.
Eigen::VectorXd eliminated_rhs(const SparseMatrix& A, const std::vector<char>& active, const Eigen::VectorXd& b,
                               const Eigen::VectorXd& g) {
  const int n = static_cast<int>(b.size());
  Eigen::VectorXd gs = Eigen::VectorXd::Zero(n);
  for (int p = 0; p < n; ++p)
    if (active[p]) gs[p] = g[p];
  Eigen::VectorXd rhs = b - A * gs;
  for (int p = 0; p < n; ++p)
    if (active[p]) rhs[p] = g[p];
  return rhs;
}

Eigen::VectorXd eliminated_apply(const SparseMatrix& A, const std::vector<char>& active, const Eigen::VectorXd& x) {
  const int n = static_cast<int>(x.size());
  Eigen::VectorXd xf = x;
  for (int p = 0; p < n; ++p)
    if (active[p]) xf[p] = 0.0;
  Eigen::VectorXd y = A * xf;
  for (int p = 0; p < n; ++p)
    if (active[p]) y[p] = x[p];
  return y;
}

}  // namespace

#ifdef PFADAPT_HAVE_CHOLMOD

struct ActiveSetSolver::Impl {
  SparseMatrix A;
  int n = 0;
  std::vector<char> active;  // active set the factor currently represents
  cholmod_common cc;
  cholmod_factor* L = nullptr;
  std::vector<int> iperm;
  long pending = 0;  // row updates since the last factorization
  int factorizations = 0;
  long row_updates = 0;

  explicit Impl(const SparseMatrix& a) : A(a), n(static_cast<int>(a.rows())) {
    A.makeCompressed();
    cholmod_start(&cc);
    cc.print = 0;
    cc.supernodal = CHOLMOD_SIMPLICIAL;
    cc.final_ll = 0;  // row updates need LDL'
  }
  ~Impl() {
    if (L) cholmod_free_factor(&L, &cc);
    cholmod_finish(&cc);
  }

  void factor(const std::vector<char>& act) {
    SparseMatrix K = eliminated(A, act);
    cholmod_sparse view{};
    view.nrow = view.ncol = n;
    view.nzmax = K.nonZeros();
    view.p = K.outerIndexPtr();
    view.i = K.innerIndexPtr();
    view.x = K.valuePtr();
    view.stype = -1;
    view.itype = CHOLMOD_INT;
    view.xtype = CHOLMOD_REAL;
    view.dtype = CHOLMOD_DOUBLE;
    view.sorted = 1;
    view.packed = 1;
    if (L) cholmod_free_factor(&L, &cc);
    L = cholmod_analyze(&view, &cc);
    if (!L || !cholmod_factorize(&view, L, &cc) || cc.status != CHOLMOD_OK || static_cast<int>(L->minor) != n)
      throw NumericalError("sparse LDL' factorization failed (matrix not positive definite?)");
    const int* perm = static_cast<const int*>(L->Perm);
    iperm.assign(n, 0);
    for (int k = 0; k < n; ++k) iperm[perm[k]] = k;
    active = act;
    pending = 0;
    ++factorizations;
  }

  void add_row(int k) {
    std::vector<std::pair<int, double>> col;
    for (SparseMatrix::InnerIterator it(A, k); it; ++it) {
      const int i = static_cast<int>(it.row());
      if (i == k || !active[i]) col.emplace_back(iperm[i], it.value());
    }
    std::sort(col.begin(), col.end());
    cholmod_sparse* R = cholmod_allocate_sparse(n, 1, col.size(), 1, 1, 0, CHOLMOD_REAL, &cc);
    auto* rp = static_cast<int*>(R->p);
    auto* ri = static_cast<int*>(R->i);
    auto* rx = static_cast<double*>(R->x);
    rp[0] = 0;
    rp[1] = static_cast<int>(col.size());
    for (std::size_t q = 0; q < col.size(); ++q) {
      ri[q] = col[q].first;
      rx[q] = col[q].second;
    }
    const int ok = cholmod_rowadd(iperm[k], R, L, &cc);
    cholmod_free_sparse(&R, &cc);
    if (!ok || cc.status != CHOLMOD_OK) throw NumericalError("LDL' row addition failed");
    active[k] = 0;
  }

  void delete_row(int k) {
    if (!cholmod_rowdel(iperm[k], nullptr, L, &cc) || cc.status != CHOLMOD_OK)
      throw NumericalError("LDL' row deletion failed");
    active[k] = 1;
  }

  /// Brings the factor to `next`, refactorizing when that is cheaper or the
  /// accumulated updates are many.
  void update(const std::vector<char>& next) {
    if (!L) return factor(next);
    std::vector<int> enter, leave;
    for (int p = 0; p < n; ++p) {
      if (next[p] && !active[p]) enter.push_back(p);
      if (!next[p] && active[p]) leave.push_back(p);
    }
    const long changes = static_cast<long>(enter.size() + leave.size());
    if (changes == 0) return;
    if (pending + changes > std::max(64, n / 8)) return factor(next);
    for (int p : enter) delete_row(p);
    for (int p : leave) add_row(p);
    pending += changes;
    row_updates += changes;
  }

  Eigen::VectorXd apply_inverse(const Eigen::VectorXd& r) {
    cholmod_dense B{};
    B.nrow = n;
    B.ncol = 1;
    B.nzmax = n;
    B.d = n;
    B.x = const_cast<double*>(r.data());
    B.xtype = CHOLMOD_REAL;
    B.dtype = CHOLMOD_DOUBLE;
    cholmod_dense* X = cholmod_solve(CHOLMOD_A, L, &B, &cc);
    if (!X) throw NumericalError("LDL' solve failed");
    Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXd>(static_cast<const double*>(X->x), n);
    cholmod_free_dense(&X, &cc);
    return x;
  }
};

#else

struct ActiveSetSolver::Impl {
  SparseMatrix A;
  int n = 0;
  std::vector<char> active;
  SpdSolver solver;
  bool ready = false;
  int factorizations = 0;
  long row_updates = 0;

  explicit Impl(const SparseMatrix& a) : A(a), n(static_cast<int>(a.rows())) { A.makeCompressed(); }

  void factor(const std::vector<char>& act) {
    solver.factorize(eliminated(A, act));
    active = act;
    ready = true;
    ++factorizations;
  }
  void update(const std::vector<char>& next) {
    if (!ready || next != active) factor(next);
  }
  Eigen::VectorXd apply_inverse(const Eigen::VectorXd& r) { return solver.solve(r, 1.0); }
};

#endif

ActiveSetSolver::ActiveSetSolver(const SparseMatrix& A) : impl_(std::make_unique<Impl>(A)) {
  if (A.rows() != A.cols()) throw InputError("active-set solver needs a square matrix");
}
ActiveSetSolver::~ActiveSetSolver() = default;

int ActiveSetSolver::factorizations() const { return impl_->factorizations; }
long ActiveSetSolver::row_updates() const { return impl_->row_updates; }

Eigen::VectorXd ActiveSetSolver::solve(const std::vector<char>& active, const Eigen::VectorXd& b,
                                       const Eigen::VectorXd& g, double tol) {
  Impl& s = *impl_;
  if (static_cast<int>(active.size()) != s.n || b.size() != s.n || g.size() != s.n)
    throw InputError("active-set solve: size mismatch");
  s.update(active);
  const Eigen::VectorXd rhs = eliminated_rhs(s.A, active, b, g);
  const double rnorm = rhs.norm();
  if (rnorm == 0.0) return Eigen::VectorXd::Zero(s.n);
  double rel = 0.0;
  for (int attempt = 0; attempt < 2; ++attempt) {
    Eigen::VectorXd x = s.apply_inverse(rhs);
    Eigen::VectorXd r = rhs - eliminated_apply(s.A, active, x);
    rel = r.norm() / rnorm;
    for (int refine = 0; refine < 3 && rel > tol; ++refine) {
      x += s.apply_inverse(r);
      r = rhs - eliminated_apply(s.A, active, x);
      rel = r.norm() / rnorm;
    }
    if (std::isfinite(rel) && rel <= tol) {
      for (int p = 0; p < s.n; ++p)
        if (active[p]) x[p] = g[p];
      return x;
    }
    s.factor(active);  // updates lost accuracy; start over from a fresh factor
  }
  std::ostringstream msg;
  msg << "active-set solve reached relative residual " << rel << " (required " << tol << ")";
  throw NumericalError(msg.str());
}

}  // namespace pfadapt
