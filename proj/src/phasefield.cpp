#include "pfadapt/phasefield.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace pfadapt {

double VICoefficients::reaction(int leaf, Point ref) const {
  const double d = driving ? driving(leaf, ref) : 0.0;
  return gc / eps + (1.0 - kappa) * d;
}

double VICoefficients::reaction_at(Point x) const {
  if (!driving) return gc / eps;
  const int leaf = mesh->locate(x);
  if (leaf < 0) throw InputError("coefficient evaluated outside the domain");
  return reaction(leaf, to_reference(mesh->leaf(leaf), x));
}

CellTable VICoefficients::reaction_table() const {
  const QuadRule& rule = tensor_gauss(kAssemblyOrder);
  CellTable t = CellTable::filled(mesh->n_leaves(), gc / eps);
  if (!driving) return t;
#pragma omp parallel for schedule(static)
  for (int e = 0; e < mesh->n_leaves(); ++e) {
    for (int q = 0; q < t.nq; ++q) t(e, q) = reaction(e, rule.points[q]);
  }
  return t;
}

VICoefficients vi_coefficients(const NodalField& u, const NodalField& obstacle, const Material& mat, bool splitting) {
  VICoefficients c;
  c.gc = mat.gc;
  c.eps = mat.eps;
  c.kappa = mat.kappa;
  c.mesh = u.mesh_ptr();
  c.driving = [u, mat, splitting](int leaf, Point ref) { return driving_density(strain(u, leaf, ref), mat, splitting); };
  c.obstacle = obstacle;
  return c;
}

VICoefficients vi_coefficients_uniform(const NodalField& obstacle, const Material& mat, double driving) {
  if (!(driving >= 0.0)) throw InputError("driving density must be nonnegative");
  VICoefficients c;
  c.gc = mat.gc;
  c.eps = mat.eps;
  c.kappa = mat.kappa;
  c.mesh = obstacle.mesh_ptr();
  if (driving > 0.0) c.driving = [driving](int, Point) { return driving; };
  c.obstacle = obstacle;
  return c;
}

// ---------------------------------------------------------------- obstacle solve

VISolution solve_vi(const DofSystem& dofs, const VICoefficients& coeffs, const std::vector<char>* initial_active,
                    Exec exec, const VISolverOptions& options) {
  if (dofs.components() != 1) throw InputError("phase-field solve needs a scalar dof system");
  const int n = dofs.n_dofs();
  if (coeffs.obstacle.values().size() != n) throw InputError("obstacle does not match the dof system");
  const SparseMatrix A = assemble_bilinear(dofs, coeffs.reaction_table(), coeffs.diffusion(), exec);
  const Eigen::VectorXd b =
      assemble_source(dofs, CellTable::filled(dofs.mesh().n_leaves(), coeffs.source()), exec);
  const Eigen::VectorXd& o = coeffs.obstacle.values();
  // Per-node penalty on the operator's diagonal, so c (phi - o) and lambda
  // carry the same units and scale with the mesh.
  const Eigen::VectorXd penalty = options.penalty_scale * A.diagonal();

  VISolution sol;
  sol.active.assign(n, 0);
  if (initial_active) {
    if (static_cast<int>(initial_active->size()) != n) throw InputError("warm-start active set has wrong size");
    sol.active = *initial_active;
  }
  // Degenerate nodes (phi = o with zero multiplier) flip on rounding noise,
  // so both the update and the stopping test use a load-scaled tolerance.
  const double tol = 1e-11 * std::max(b.cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());
  ActiveSetSolver solver(A);
  Eigen::VectorXd phi(n);
  Eigen::VectorXd lambda(n);
  int last_delta = -1;
  bool converged = false;
  for (int it = 1; it <= options.max_iterations; ++it) {
    sol.iterations = it;
    phi = solver.solve(sol.active, b, o);
    lambda = b - A * phi;
    double kkt = 0.0;
    for (int p = 0; p < n; ++p) kkt = std::max(kkt, std::abs(std::min((o[p] - phi[p]) * penalty[p], lambda[p])));
    int delta = 0;
    std::vector<char> next(n, 0);
    for (int p = 0; p < n; ++p) {
      next[p] = lambda[p] + penalty[p] * (phi[p] - o[p]) > tol ? 1 : 0;
      delta += next[p] != sol.active[p];
    }
    last_delta = delta;
    if (delta == 0 || kkt <= tol) {
      converged = true;
      break;
    }
    sol.active = std::move(next);
  }
  if (!converged) {
    std::ostringstream msg;
    msg << "active-set iteration did not converge in " << options.max_iterations
        << " iterations; last active-set change: " << last_delta << " nodes";
    throw NumericalError(msg.str());
  }
  // Rounding-level overshoot of the obstacle is clipped.
  bool clipped = false;
  for (int p = 0; p < n; ++p) {
    if (phi[p] > o[p]) {
      phi[p] = o[p];
      clipped = true;
    }
  }
  if (clipped) lambda = b - A * phi;
  sol.phi = NodalField(dofs.mesh_ptr(), 1, phi);
  sol.multiplier = lambda;
  return sol;
}

double complementarity_residual(const VISolution& sol, const NodalField& obstacle) {
  double r = 0.0;
  const auto& phi = sol.phi.values();
  for (Eigen::Index p = 0; p < phi.size(); ++p) {
    r = std::max(r, std::abs(std::min(obstacle.values()[p] - phi[p], sol.multiplier[p])));
  }
  return r;
}

// ---------------------------------------------------------------- residuals

double element_residual(const NodalField& phi, const VICoefficients& coeffs, int leaf, Point ref) {
  // A bilinear function on an axis-aligned square has no xx or yy terms.
  const double laplacian = 0.0;
  return coeffs.source() + coeffs.diffusion() * laplacian - coeffs.reaction(leaf, ref) * phi.value(leaf, ref);
}

double normal_jump(const NodalField& phi, const QuadMesh::Side& side, double t) {
  const QuadMesh& mesh = phi.mesh();
  const Point x = side.a + t * (side.b - side.a);
  const Point gm = phi.gradient(side.minus, to_reference(mesh.leaf(side.minus), x));
  if (side.on_boundary()) return dot(gm, side.normal);
  const Point gp = phi.gradient(side.plus, to_reference(mesh.leaf(side.plus), x));
  return dot(gp - gm, side.normal);
}

namespace {

/// Restriction of the constrained basis functions to one leaf: for every
/// master m touching the leaf, its weights on the four corner functions.
struct LeafBasis {
  std::vector<int> masters;
  std::vector<std::array<double, 4>> weights;

  LeafBasis(const QuadMesh& mesh, int leaf) {
    const auto& corners = mesh.leaf(leaf).corners;
    for (int a = 0; a < 4; ++a) {
      for (const auto& w : mesh.expansion(corners[a])) {
        auto it = std::find(masters.begin(), masters.end(), w.master);
        std::size_t k = it - masters.begin();
        if (it == masters.end()) {
          masters.push_back(w.master);
          weights.push_back({0, 0, 0, 0});
        }
        weights[k][a] += w.weight;
      }
    }
  }
  double value(std::size_t k, const std::array<double, 4>& N) const {
    return weights[k][0] * N[0] + weights[k][1] * N[1] + weights[k][2] * N[2] + weights[k][3] * N[3];
  }
  Point gradient(std::size_t k, Point ref, double h) const { return q1_gradient(weights[k], ref, h); }
};

/// Integral of the master's basis function over its sub-patch squares,
/// weighted by f (exact for bilinear f with order 2).
double subpatch_integral(const QuadMesh& mesh, int master, const std::function<double(Point)>& f, int refine_levels) {
  const Patch& patch = mesh.patch(master);
  const GaussLine& g = gauss_line(2);
  const int pieces = 1 << refine_levels;
  double acc = 0.0;
  for (const auto& sq : patch.subpatch) {
    const auto& lf = mesh.leaf(sq.leaf);
    const LeafBasis basis(mesh, sq.leaf);
    const std::size_t k = std::find(basis.masters.begin(), basis.masters.end(), master) - basis.masters.begin();
    const double e = sq.edge / pieces;
    for (int pj = 0; pj < pieces; ++pj) {
      for (int pi = 0; pi < pieces; ++pi) {
        for (int j = 0; j < 2; ++j) {
          for (int i = 0; i < 2; ++i) {
            const Point x{sq.origin.x + (pi + g.x[i]) * e, sq.origin.y + (pj + g.x[j]) * e};
            const double phi_p = basis.value(k, q1_values(to_reference(lf, x)));
            acc += g.w[i] * g.w[j] * e * e * phi_p * (f ? f(x) : 1.0);
          }
        }
      }
    }
  }
  return acc;
}

}  // namespace

double subpatch_mean(const QuadMesh& mesh, int master, const std::function<double(Point)>& psi, int refine_levels) {
  const double den = subpatch_integral(mesh, master, nullptr, refine_levels);
  return subpatch_integral(mesh, master, psi, refine_levels) / den;
}

ConstrainingForce constraining_force(const DofSystem& dofs, const NodalField& phi, const VICoefficients& coeffs,
                                     Exec exec, double tol) {
  const QuadMesh& mesh = dofs.mesh();
  const int nm = mesh.n_masters();
  ConstrainingForce f;
  const SparseMatrix A = assemble_bilinear(dofs, coeffs.reaction_table(), coeffs.diffusion(), exec);
  const Eigen::VectorXd b = assemble_source(dofs, CellTable::filled(mesh.n_leaves(), coeffs.source()), exec);
  f.algebraic = b - A * phi.values();

  f.integral = Eigen::VectorXd::Zero(nm);
  f.basis_integral = Eigen::VectorXd::Zero(nm);
  f.subpatch_integral = Eigen::VectorXd::Zero(nm);
  const QuadRule& rule = tensor_gauss(kAssemblyOrder);
  for (int e = 0; e < mesh.n_leaves(); ++e) {
    const auto& lf = mesh.leaf(e);
    const LeafBasis basis(mesh, e);
    const double area = lf.h * lf.h;
    for (std::size_t k = 0; k < basis.masters.size(); ++k) {
      const auto& w = basis.weights[k];
      f.basis_integral[basis.masters[k]] += 0.25 * area * (w[0] + w[1] + w[2] + w[3]);
    }
    for (std::size_t q = 0; q < rule.points.size(); ++q) {
      const auto N = q1_values(rule.points[q]);
      const double r = element_residual(phi, coeffs, e, rule.points[q]);
      for (std::size_t k = 0; k < basis.masters.size(); ++k)
        f.integral[basis.masters[k]] += rule.weights[q] * area * r * basis.value(k, N);
    }
  }
  const GaussLine& line = gauss_line(3);
  const double ge = coeffs.diffusion();
  for (const auto& s : mesh.sides()) {
    const LeafBasis basis(mesh, s.minus);
    const auto& lf = mesh.leaf(s.minus);
    for (std::size_t q = 0; q < line.x.size(); ++q) {
      const Point x = s.a + line.x[q] * (s.b - s.a);
      // Interior sides carry the gradient jump, boundary sides the outward flux with opposite sign.
      const double flux = s.on_boundary() ? -ge * normal_jump(phi, s, line.x[q]) : ge * normal_jump(phi, s, line.x[q]);
      const auto N = q1_values(to_reference(lf, x));
      for (std::size_t k = 0; k < basis.masters.size(); ++k)
        f.integral[basis.masters[k]] += line.w[q] * s.length * flux * basis.value(k, N);
    }
  }
  for (int m = 0; m < nm; ++m) f.subpatch_integral[m] = subpatch_integral(mesh, m, nullptr, 0);
  f.nodal = f.algebraic.cwiseQuotient(f.basis_integral);
  f.max_deviation = (f.algebraic - f.integral).cwiseAbs().maxCoeff();
  if (!(f.max_deviation <= tol)) {
    std::ostringstream msg;
    msg << "constraining force representations disagree by " << f.max_deviation;
    throw NumericalError(msg.str());
  }
  return f;
}

std::vector<ContactClass> classify_contact(const NodalField& phi, const VICoefficients& coeffs, double tol) {
  const QuadMesh& mesh = phi.mesh();
  const NodalField& o = coeffs.obstacle;
  const int nm = mesh.n_masters();
  std::vector<ContactClass> cls(nm, ContactClass::none);
  const QuadRule& rule = tensor_gauss(kAssemblyOrder);
  const GaussLine& line = gauss_line(3);
  // Sign surrogate per cell and per side, evaluated once.
  std::vector<char> cell_ok(mesh.n_leaves(), 1);
  std::vector<char> cell_touch(mesh.n_leaves(), 1);
  for (int e = 0; e < mesh.n_leaves(); ++e) {
    for (const auto& q : rule.points) {
      if (element_residual(phi, coeffs, e, q) < -tol) cell_ok[e] = 0;
    }
    for (int v : mesh.leaf(e).corners) {
      if (std::abs(phi.vertex_value(v) - o.vertex_value(v)) > tol) cell_touch[e] = 0;
    }
  }
  const auto sides = mesh.sides();
  std::vector<char> side_ok(sides.size(), 1);
  for (std::size_t s = 0; s < sides.size(); ++s) {
    if (sides[s].on_boundary()) continue;
    for (double t : line.x) {
      if (coeffs.diffusion() * normal_jump(phi, sides[s], t) < -tol) side_ok[s] = 0;
    }
  }
  for (int m = 0; m < nm; ++m) {
    if (std::abs(phi.master_value(m) - o.master_value(m)) > tol) continue;
    const Patch& p = mesh.patch(m);
    bool full = true;
    for (int e : p.cells) full = full && cell_touch[e] && cell_ok[e];
    for (int s : p.interior_sides) full = full && side_ok[s];
    cls[m] = full ? ContactClass::full : ContactClass::semi;
  }
  return cls;
}

// ---------------------------------------------------------------- estimators

namespace {

struct LocalNorms {
  std::vector<double> cell_r2;   // ||r||^2 per leaf
  std::vector<double> cell_min;  // min reaction at the assembly points
  std::vector<double> side_j2;   // ||gc eps [grad phi]||^2, or the boundary flux
};

LocalNorms local_norms(const NodalField& phi, const VICoefficients& coeffs, int order, Exec exec) {
  const QuadMesh& mesh = phi.mesh();
  const QuadRule& rule = tensor_gauss(order);
  const QuadRule& arule = tensor_gauss(kAssemblyOrder);
  const GaussLine& line = gauss_line(order);
  const int nl = mesh.n_leaves();
  const auto sides = mesh.sides();
  const int ns = static_cast<int>(sides.size());
  LocalNorms n;
  n.cell_r2.assign(nl, 0.0);
  n.cell_min.assign(nl, 0.0);
  n.side_j2.assign(ns, 0.0);
  const double ge = coeffs.diffusion();
  const auto cell = [&](int e) {
    const double area = mesh.leaf(e).h * mesh.leaf(e).h;
    double acc = 0.0;
    for (std::size_t q = 0; q < rule.points.size(); ++q) {
      const double r = element_residual(phi, coeffs, e, rule.points[q]);
      acc += rule.weights[q] * area * r * r;
    }
    n.cell_r2[e] = acc;
    double mn = std::numeric_limits<double>::infinity();
    for (const auto& q : arule.points) mn = std::min(mn, coeffs.reaction(e, q));
    n.cell_min[e] = mn;
  };
  const auto side = [&](int k) {
    double acc = 0.0;
    for (std::size_t q = 0; q < line.x.size(); ++q) {
      const double j = ge * normal_jump(phi, sides[k], line.x[q]);
      acc += line.w[q] * sides[k].length * j * j;
    }
    n.side_j2[k] = acc;
  };
  if (exec == Exec::parallel) {
#pragma omp parallel for schedule(static)
    for (int e = 0; e < nl; ++e) cell(e);
#pragma omp parallel for schedule(static)
    for (int k = 0; k < ns; ++k) side(k);
  } else {
    for (int e = 0; e < nl; ++e) cell(e);
    for (int k = 0; k < ns; ++k) side(k);
  }
  return n;
}

double contact_term(const QuadMesh& mesh, int m, const NodalField& phi, const VICoefficients& coeffs,
                    const ConstrainingForce& force) {
  const auto gap = [&](Point x) { return coeffs.obstacle.at(x) - phi.at(x); };
  const double radicand = force.nodal[m] * subpatch_integral(mesh, m, gap, 0);
  if (radicand < -1e-12) {
    std::ostringstream msg;
    msg << "negative contact estimator radicand " << radicand << " at master node " << m;
    throw NumericalError(msg.str());
  }
  return std::sqrt(std::max(radicand, 0.0));
}

}  // namespace

PhaseFieldEstimate estimate_phi(const NodalField& phi, const VICoefficients& coeffs,
                                const std::vector<ContactClass>& classes, const ConstrainingForce& force, int order,
                                Exec exec) {
  const QuadMesh& mesh = phi.mesh();
  const int nm = mesh.n_masters();
  if (static_cast<int>(classes.size()) != nm) throw InputError("contact classification does not match the mesh");
  const LocalNorms ln = local_norms(phi, coeffs, order, exec);
  const double ge = coeffs.diffusion();
  const double sqrt_ge = std::sqrt(ge);
  const double ge_quarter = std::pow(ge, -0.25);

  PhaseFieldEstimate est;
  est.eta1.assign(nm, 0.0);
  est.eta2.assign(nm, 0.0);
  est.eta3.assign(nm, 0.0);
  est.eta4.assign(nm, 0.0);
  est.alpha.assign(nm, 0.0);
  est.weight.assign(nm, 0.0);
  const auto node = [&](int m) {
    const Patch& p = mesh.patch(m);
    double alpha = std::numeric_limits<double>::infinity();
    double r2 = 0.0, j2 = 0.0, b2 = 0.0;
    for (int e : p.cells) {
      alpha = std::min(alpha, ln.cell_min[e]);
      r2 += ln.cell_r2[e];
    }
    for (int s : p.interior_sides) j2 += ln.side_j2[s];
    for (int s : p.boundary_sides) b2 += ln.side_j2[s];
    const double w = std::min(p.diameter / sqrt_ge, 1.0 / std::sqrt(alpha));
    est.alpha[m] = alpha;
    est.weight[m] = w;
    if (classes[m] != ContactClass::full) {
      est.eta1[m] = w * std::sqrt(r2);
      est.eta2[m] = std::sqrt(w) * ge_quarter * std::sqrt(j2);
      est.eta3[m] = std::sqrt(w) * ge_quarter * std::sqrt(b2);
    }
  };
  if (exec == Exec::parallel) {
#pragma omp parallel for schedule(static)
    for (int m = 0; m < nm; ++m) node(m);
  } else {
    for (int m = 0; m < nm; ++m) node(m);
  }
  for (int m = 0; m < nm; ++m) {
    if (classes[m] == ContactClass::semi) {
      est.eta4[m] = contact_term(mesh, m, phi, coeffs, force);
      ++est.n_semi;
    } else if (classes[m] == ContactClass::full) {
      ++est.n_full;
    }
  }
  double s1 = 0, s2 = 0, s3 = 0, s4 = 0;
  for (int m = 0; m < nm; ++m) {
    s1 += est.eta1[m] * est.eta1[m];
    s2 += est.eta2[m] * est.eta2[m];
    s3 += est.eta3[m] * est.eta3[m];
    s4 += est.eta4[m] * est.eta4[m];
  }
  est.total1 = std::sqrt(s1);
  est.total2 = std::sqrt(s2);
  est.total3 = std::sqrt(s3);
  est.total4 = std::sqrt(s4);
  est.total = est.total1 + est.total2 + est.total3 + est.total4;
  return est;
}

StandardEstimate estimate_phi_standard(const NodalField& phi, const VICoefficients& coeffs,
                                       const std::vector<ContactClass>& classes, const ConstrainingForce& force,
                                       int order, Exec exec) {
  const QuadMesh& mesh = phi.mesh();
  const int nm = mesh.n_masters();
  const LocalNorms ln = local_norms(phi, coeffs, order, exec);
  StandardEstimate est;
  est.eta.assign(nm, 0.0);
  double sum = 0.0, contact = 0.0;
  for (int m = 0; m < nm; ++m) {
    const Patch& p = mesh.patch(m);
    if (classes[m] == ContactClass::semi) {
      const double c = contact_term(mesh, m, phi, coeffs, force);
      contact += c * c;
    }
    if (classes[m] == ContactClass::full) continue;
    double r2 = 0.0, j2 = 0.0;
    for (int e : p.cells) r2 += ln.cell_r2[e];
    for (int s : p.interior_sides) j2 += ln.side_j2[s];
    for (int s : p.boundary_sides) j2 += ln.side_j2[s];
    const double h = p.diameter;
    est.eta[m] = std::sqrt(h * h * r2 + h * j2);
    sum += est.eta[m] * est.eta[m];
  }
  est.total_residual = std::sqrt(sum);
  est.total = est.total_residual + std::sqrt(contact);
  return est;
}

double robust_residual_estimator(const NodalField& phi, const VICoefficients& coeffs, int order) {
  const QuadMesh& mesh = phi.mesh();
  const QuadRule& rule = tensor_gauss(order);
  const QuadRule& arule = tensor_gauss(kAssemblyOrder);
  const GaussLine& line = gauss_line(order);
  const double ge = coeffs.diffusion();
  double s1 = 0.0, s2 = 0.0, s3 = 0.0;
  for (int m = 0; m < mesh.n_masters(); ++m) {
    const Patch& p = mesh.patch(m);
    double alpha = std::numeric_limits<double>::infinity();
    double r2 = 0.0;
    for (int e : p.cells) {
      const auto& lf = mesh.leaf(e);
      for (std::size_t q = 0; q < rule.points.size(); ++q) {
        const Point x = to_physical(lf, rule.points[q]);
        const double c = coeffs.reaction(e, rule.points[q]);
        const double r = coeffs.source() - c * phi.value(e, to_reference(lf, x));
        r2 += rule.weights[q] * lf.h * lf.h * r * r;
      }
      for (const auto& q : arule.points) alpha = std::min(alpha, coeffs.reaction(e, q));
    }
    const auto side_sum = [&](const std::vector<int>& list) {
      double acc = 0.0;
      for (int s : list) {
        const auto& sd = mesh.side(s);
        for (std::size_t q = 0; q < line.x.size(); ++q) {
          const Point x = sd.a + line.x[q] * (sd.b - sd.a);
          const Point gm = phi.gradient(sd.minus, to_reference(mesh.leaf(sd.minus), x));
          Point jump = gm;
          if (!sd.on_boundary()) jump = phi.gradient(sd.plus, to_reference(mesh.leaf(sd.plus), x)) - gm;
          const double j = ge * dot(jump, sd.normal);
          acc += line.w[q] * sd.length * j * j;
        }
      }
      return acc;
    };
    const double w = std::min(p.diameter / std::sqrt(ge), 1.0 / std::sqrt(alpha));
    s1 += w * w * r2;
    s2 += w / std::sqrt(ge) * side_sum(p.interior_sides);
    s3 += w / std::sqrt(ge) * side_sum(p.boundary_sides);
  }
  return std::sqrt(s1) + std::sqrt(s2) + std::sqrt(s3);
}

double energy_norm(const NodalField& v, const VICoefficients& coeffs, int order) {
  const QuadMesh& mesh = v.mesh();
  const QuadRule& rule = tensor_gauss(order);
  const bool same_mesh = coeffs.mesh.get() == &mesh || !coeffs.driving;
  std::vector<double> per_leaf(mesh.n_leaves(), 0.0);
#pragma omp parallel for schedule(static)
  for (int e = 0; e < mesh.n_leaves(); ++e) {
    const auto& lf = mesh.leaf(e);
    const auto c = v.corner_values(e);
    double local = 0.0;
    for (std::size_t q = 0; q < rule.points.size(); ++q) {
      const Point r = rule.points[q];
      const double val = q1_eval(c, r);
      const Point g = q1_gradient(c, r, lf.h);
      const double react = same_mesh ? coeffs.reaction(e, r) : coeffs.reaction_at(to_physical(lf, r));
      local += rule.weights[q] * lf.h * lf.h * (coeffs.diffusion() * dot(g, g) + react * val * val);
    }
    per_leaf[e] = local;
  }
  double acc = 0.0;
  for (double x : per_leaf) acc += x;
  return std::sqrt(acc);
}

// ---------------------------------------------------------------- Galerkin functional

namespace {

// Reaction as the assembled operator sees it: the tensor Lagrange interpolant
// of its values at the leaf's assembly points. Equals the reaction whenever
// that is polynomial of degree < kAssemblyOrder per direction.
class AssembledReaction {
 public:
  explicit AssembledReaction(const VICoefficients& c) : nodes_(gauss_line(kAssemblyOrder).x), table_(c.reaction_table()) {}

  double operator()(int leaf, Point r) const {
    std::array<double, kAssemblyOrder> lx, ly;
    for (int i = 0; i < kAssemblyOrder; ++i) {
      lx[i] = ly[i] = 1.0;
      for (int j = 0; j < kAssemblyOrder; ++j) {
        if (j == i) continue;
        lx[i] *= (r.x - nodes_[j]) / (nodes_[i] - nodes_[j]);
        ly[i] *= (r.y - nodes_[j]) / (nodes_[i] - nodes_[j]);
      }
    }
    double v = 0.0;
    for (int j = 0; j < kAssemblyOrder; ++j)
      for (int i = 0; i < kAssemblyOrder; ++i) v += lx[i] * ly[j] * table_(leaf, i + kAssemblyOrder * j);
    return v;
  }

 private:
  std::vector<double> nodes_;
  CellTable table_;
};

}  // namespace

GalerkinCheck galerkin_functional_check(const NodalField& phi, const VICoefficients& coeffs,
                                        const std::vector<ContactClass>& classes, const NodalField& psi) {
  const QuadMesh& coarse = phi.mesh();
  const QuadMesh& fine = psi.mesh();
  if (!coarse.is_refined_by(fine)) throw InputError("probe must live on a refinement of the solution mesh");
  const int nm = coarse.n_masters();
  const double src = coeffs.source();
  const double ge = coeffs.diffusion();
  const QuadRule& rule = tensor_gauss(4);
  const AssembledReaction reaction(coeffs);

  // Volume terms on the probe mesh; every probe leaf sits inside one solution leaf.
  double total = 0.0;
  Eigen::VectorXd lam = Eigen::VectorXd::Zero(nm);      // <src, phi_p> - a(phi, phi_p)
  Eigen::VectorXd full = Eigen::VectorXd::Zero(nm);     // <src, psi phi_p> - a(phi, psi phi_p)
  Eigen::VectorXd vol_psi = Eigen::VectorXd::Zero(nm);  // int r psi phi_p
  Eigen::VectorXd vol_one = Eigen::VectorXd::Zero(nm);  // int r phi_p
  for (int f = 0; f < fine.n_leaves(); ++f) {
    const auto& lf = fine.leaf(f);
    const int e = coarse.locate(to_physical(lf, {0.5, 0.5}));
    const auto& le = coarse.leaf(e);
    const LeafBasis basis(coarse, e);
    const auto pc = phi.corner_values(e);
    const auto sc = psi.corner_values(f);
    for (std::size_t q = 0; q < rule.points.size(); ++q) {
      const double w = rule.weights[q] * lf.h * lf.h;
      const Point x = to_physical(lf, rule.points[q]);
      const Point re = to_reference(le, x);
      const double c = reaction(e, re);
      const double ph = q1_eval(pc, re);
      const Point gph = q1_gradient(pc, re, le.h);
      const double ps = q1_eval(sc, rule.points[q]);
      const Point gps = q1_gradient(sc, rule.points[q], lf.h);
      const double r = src - c * ph;
      total += w * (r * ps - ge * dot(gph, gps));
      const auto N = q1_values(re);
      for (std::size_t k = 0; k < basis.masters.size(); ++k) {
        const int m = basis.masters[k];
        const double bp = basis.value(k, N);
        const Point gbp = basis.gradient(k, re, le.h);
        lam[m] += w * (r * bp - ge * dot(gph, gbp));
        full[m] += w * (r * ps * bp - ge * dot(gph, ps * gbp + bp * gps));
        vol_psi[m] += w * r * ps * bp;
        vol_one[m] += w * r * bp;
      }
    }
  }

  // Side terms: split each solution side into finest-level pieces so the
  // probe is polynomial on each piece.
  const int finest = fine.max_level();
  const GaussLine& line = gauss_line(3);
  Eigen::VectorXd side_psi = Eigen::VectorXd::Zero(nm);
  Eigen::VectorXd side_one = Eigen::VectorXd::Zero(nm);
  for (const auto& s : coarse.sides()) {
    const auto& lm = coarse.leaf(s.minus);
    const LeafBasis basis(coarse, s.minus);
    const int pieces = 1 << std::max(0, finest - lm.level);
    for (int piece = 0; piece < pieces; ++piece) {
      for (std::size_t q = 0; q < line.x.size(); ++q) {
        const double t = (piece + line.x[q]) / pieces;
        const Point x = s.a + t * (s.b - s.a);
        const double w = line.w[q] * s.length / pieces;
        const double flux = s.on_boundary() ? -ge * normal_jump(phi, s, t) : ge * normal_jump(phi, s, t);
        const double ps = psi.at(x);
        const auto N = q1_values(to_reference(lm, x));
        for (std::size_t k = 0; k < basis.masters.size(); ++k) {
          const double bp = basis.value(k, N);
          side_psi[basis.masters[k]] += w * flux * ps * bp;
          side_one[basis.masters[k]] += w * flux * bp;
        }
      }
    }
  }

  const int sub_levels = std::max(0, finest - coarse.min_level() - 3);
  const auto psi_at = [&](Point x) { return psi.at(x); };
  GalerkinCheck out;
  out.direct = total;
  for (int m = 0; m < nm; ++m) {
    if (classes[m] == ContactClass::full) {
      out.direct -= full[m];
      continue;
    }
    const double cp = subpatch_mean(coarse, m, psi_at, sub_levels);
    if (classes[m] == ContactClass::semi) out.direct -= lam[m] * cp;
    out.representation += (vol_psi[m] + side_psi[m]) - cp * (vol_one[m] + side_one[m]);
  }
  return out;
}

}  // namespace pfadapt
