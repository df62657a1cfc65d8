#include "pfadapt/elasticity.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace pfadapt {

void Material::validate() const {
  if (!(mu > 0.0)) throw InputError("shear modulus mu must be positive");
  if (!(3.0 * lambda + 2.0 * mu > 0.0)) throw InputError("3 lambda + 2 mu must be positive");
  if (!(gc > 0.0)) throw InputError("gc must be positive");
  if (!(kappa > 0.0 && kappa < 1.0)) throw InputError("kappa must lie in (0, 1)");
  if (!(eps > 0.0)) throw InputError("eps must be positive");
}

StrainSplit split_strain(const Sym2& E) {
  StrainSplit s;
  const double m = 0.5 * (E.xx + E.yy);
  const double hd = 0.5 * (E.xx - E.yy);
  const double r = std::hypot(hd, E.xy);
  s.d1 = m + r;
  s.d2 = m - r;
  if (r > 0.0) {
    const double theta = 0.5 * std::atan2(E.xy, hd);
    const double c = std::cos(theta);
    const double sn = std::sin(theta);
    s.Q << c, -sn, sn, c;
  }
  const auto part = [&](double a, double b) {
    const Eigen::Matrix2d M = s.Q * Eigen::Vector2d(a, b).asDiagonal() * s.Q.transpose();
    return Sym2{M(0, 0), M(1, 1), 0.5 * (M(0, 1) + M(1, 0))};
  };
  s.plus = part(std::max(s.d1, 0.0), std::max(s.d2, 0.0));
  s.minus = part(std::min(s.d1, 0.0), std::min(s.d2, 0.0));
  return s;
}

Sym2 stress(const Sym2& E, double mu, double lambda) {
  const double tr = E.trace();
  return {2.0 * mu * E.xx + lambda * tr, 2.0 * mu * E.yy + lambda * tr, 2.0 * mu * E.xy};
}

StressPair stress_split(const Sym2& E, double mu, double lambda) {
  const StrainSplit s = split_strain(E);
  const double tr = E.trace();
  const double trp = std::max(tr, 0.0);
  const double trm = std::min(tr, 0.0);
  StressPair p;
  p.plus = {2.0 * mu * s.plus.xx + lambda * trp, 2.0 * mu * s.plus.yy + lambda * trp, 2.0 * mu * s.plus.xy};
  p.minus = {2.0 * mu * s.minus.xx + lambda * trm, 2.0 * mu * s.minus.yy + lambda * trm, 2.0 * mu * s.minus.xy};
  const double a = std::max(s.d1, 0.0);
  const double b = std::max(s.d2, 0.0);
  p.driving = 2.0 * mu * (a * a + b * b) + lambda * trp * trp;
  return p;
}

double driving_density(const Sym2& E, const Material& mat, bool splitting) {
  if (splitting) return stress_split(E, mat.mu, mat.lambda).driving;
  return ddot(stress(E, mat.mu, mat.lambda), E);
}

double degradation(double phi, double kappa) {
  const double p = std::clamp(phi, 0.0, 1.0);
  return (1.0 - kappa) * p * p + kappa;
}

double degradation_slope(double phi, double kappa) {
  if (phi < 0.0 || phi > 1.0) return 0.0;
  return 2.0 * (1.0 - kappa) * phi;
}

Sym2 strain(const NodalField& u, int leaf, Point ref) {
  const Point gx = u.gradient(leaf, ref, 0);
  const Point gy = u.gradient(leaf, ref, 1);
  return {gx.x, gy.y, 0.5 * (gx.y + gy.x)};
}

CellTable degradation_table(const NodalField& phi, double kappa) {
  const QuadMesh& mesh = phi.mesh();
  const QuadRule& rule = tensor_gauss(kAssemblyOrder);
  CellTable t = CellTable::filled(mesh.n_leaves(), 0.0);
#pragma omp parallel for schedule(static)
  for (int e = 0; e < mesh.n_leaves(); ++e) {
    const auto c = phi.corner_values(e);
    for (int q = 0; q < t.nq; ++q) t(e, q) = degradation(q1_eval(c, rule.points[q]), kappa);
  }
  return t;
}

CellTable driving_table(const NodalField& u, const Material& mat, bool splitting) {
  const QuadMesh& mesh = u.mesh();
  const QuadRule& rule = tensor_gauss(kAssemblyOrder);
  CellTable t = CellTable::filled(mesh.n_leaves(), 0.0);
#pragma omp parallel for schedule(static)
  for (int e = 0; e < mesh.n_leaves(); ++e) {
    for (int q = 0; q < t.nq; ++q) t(e, q) = driving_density(strain(u, e, rule.points[q]), mat, splitting);
  }
  return t;
}

namespace {

using Voigt = Eigen::Matrix3d;  // (xx, yy, xy) stress vs (xx, yy, 2xy) strain

Voigt isotropic(double mu, double lambda) {
  Voigt D;
  D << lambda + 2 * mu, lambda, 0, lambda, lambda + 2 * mu, 0, 0, 0, mu;
  return D;
}

/// Secant of the degraded split stress at strain Ek: a symmetric linear map
/// that reproduces g sigma_plus(Ek) + sigma_minus(Ek) at Ek.
Voigt split_secant(const Sym2& Ek, double g, double mu, double lambda) {
  const StrainSplit s = split_strain(Ek);
  const auto H = [](double d) { return d > 0.0 ? 1.0 : 0.0; };
  Eigen::Matrix2d M;
  M(0, 0) = H(s.d1);
  M(1, 1) = H(s.d2);
  M(0, 1) = M(1, 0) = s.d1 != s.d2 ? (std::max(s.d1, 0.0) - std::max(s.d2, 0.0)) / (s.d1 - s.d2) : H(s.d1);
  const double ht = H(Ek.trace());
  Voigt D;
  const Sym2 units[3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 0.5}};
  for (int j = 0; j < 3; ++j) {
    const Sym2& E = units[j];
    const Eigen::Matrix2d Pp = s.Q * (M.cwiseProduct(s.Q.transpose() * E.matrix() * s.Q)) * s.Q.transpose();
    const Sym2 plus{Pp(0, 0), Pp(1, 1), 0.5 * (Pp(0, 1) + Pp(1, 0))};
    const Sym2 minus = E - plus;
    const double tr = E.trace();
    const Sym2 sig = g * (2.0 * mu * plus + Sym2{lambda * ht * tr, lambda * ht * tr, 0.0}) + 2.0 * mu * minus +
                     Sym2{lambda * (1 - ht) * tr, lambda * (1 - ht) * tr, 0.0};
    D(0, j) = sig.xx;
    D(1, j) = sig.yy;
    D(2, j) = sig.xy;
  }
  return 0.5 * (D + D.transpose());
}

/// Strain-displacement rows for the 8 local dofs (corner-major, x then y).
Eigen::Matrix<double, 3, 8> b_matrix(Point ref, double h) {
  const auto G = q1_ref_gradients(ref);
  Eigen::Matrix<double, 3, 8> B = Eigen::Matrix<double, 3, 8>::Zero();
  for (int a = 0; a < 4; ++a) {
    const double gx = G[a].x / h;
    const double gy = G[a].y / h;
    B(0, 2 * a) = gx;
    B(2, 2 * a) = gy;
    B(1, 2 * a + 1) = gy;
    B(2, 2 * a + 1) = gx;
  }
  return B;
}

Sym2 degraded_stress(const Sym2& E, double g, const Material& mat, bool splitting) {
  if (!splitting) return g * stress(E, mat.mu, mat.lambda);
  const StressPair p = stress_split(E, mat.mu, mat.lambda);
  return g * p.plus + p.minus;
}

SparseMatrix assemble_elastic(const DofSystem& dofs, const CellTable& g, const Material& mat, const NodalField* lag,
                              Exec exec) {
  const QuadRule& rule = tensor_gauss(kAssemblyOrder);
  const QuadMesh& mesh = dofs.mesh();
  const Voigt C = isotropic(mat.mu, mat.lambda);
  return assemble_matrix(
      dofs,
      [&](int e, Eigen::Ref<Eigen::MatrixXd> K) {
        const double h = mesh.leaf(e).h;
        for (int q = 0; q < static_cast<int>(rule.points.size()); ++q) {
          const auto B = b_matrix(rule.points[q], h);
          const Voigt D = lag ? split_secant(strain(*lag, e, rule.points[q]), g(e, q), mat.mu, mat.lambda) : Voigt(g(e, q) * C);
          K.noalias() += (rule.weights[q] * h * h) * B.transpose() * D * B;
        }
      },
      exec);
}

double masked_norm(const Eigen::VectorXd& r, const std::vector<char>& fixed) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < r.size(); ++i)
    if (!fixed[i]) s += r[i] * r[i];
  return std::sqrt(s);
}

}  // namespace

Eigen::VectorXd elastic_residual(const DofSystem& dofs, const NodalField& u, const NodalField& phi_prev,
                                 const Material& mat, bool splitting, Exec exec) {
  const QuadRule& rule = tensor_gauss(kAssemblyOrder);
  const QuadMesh& mesh = dofs.mesh();
  const CellTable g = degradation_table(phi_prev, mat.kappa);
  return assemble_vector(
      dofs,
      [&](int e, Eigen::Ref<Eigen::VectorXd> f) {
        const double h = mesh.leaf(e).h;
        for (int q = 0; q < static_cast<int>(rule.points.size()); ++q) {
          const Sym2 s = degraded_stress(strain(u, e, rule.points[q]), g(e, q), mat, splitting);
          const auto B = b_matrix(rule.points[q], h);
          f.noalias() += (rule.weights[q] * h * h) * B.transpose() * Eigen::Vector3d(s.xx, s.yy, s.xy);
        }
      },
      exec);
}

DisplacementSolve solve_displacement(const DofSystem& dofs, const NodalField& phi_prev, const Dirichlet& bc,
                                     const Material& mat, bool splitting, Exec exec, SpdSolver* solver) {
  if (dofs.components() != 2) throw InputError("displacement solve needs a vector dof system");
  if (phi_prev.mesh().n_masters() != dofs.mesh().n_masters() || phi_prev.mesh().n_leaves() != dofs.mesh().n_leaves()) {
    throw InputError("phase field and displacement live on different meshes");
  }
  SpdSolver local_solver;
  SpdSolver& lin = solver ? *solver : local_solver;
  const CellTable g = degradation_table(phi_prev, mat.kappa);

  DisplacementSolve out;
  SparseMatrix K = assemble_elastic(dofs, g, mat, nullptr, exec);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(dofs.n_dofs());
  apply_dirichlet(K, rhs, bc);
  lin.factorize(K);
  out.u = NodalField(dofs.mesh_ptr(), 2, lin.solve(rhs));
  out.iterations = 1;
  if (!splitting) return out;

  std::vector<char> fixed(dofs.n_dofs(), 0);
  for (int d : bc.dofs) fixed[d] = 1;
  const Eigen::VectorXd r0 = elastic_residual(dofs, out.u, phi_prev, mat, true, exec);
  const double first = masked_norm(r0, fixed);
  // Floor at the linear solver's accuracy, for states where the first iterate
  // already balances the split stress (e.g. undamaged material).
  const double scale = elastic_residual(dofs, out.u, phi_prev, mat, false, exec).cwiseAbs().maxCoeff();
  const double floor = 1e-10 * std::max(scale, 1e-300);
  double res = first;
  constexpr int kMaxIterations = 50;
  while (res > 1e-8 * first && res > floor) {
    if (out.iterations > kMaxIterations) {
      std::ostringstream msg;
      msg << "split displacement iteration did not converge: relative residual " << res / first << " after "
          << kMaxIterations << " iterations";
      throw NumericalError(msg.str());
    }
    SparseMatrix Kk = assemble_elastic(dofs, g, mat, &out.u, exec);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(dofs.n_dofs());
    apply_dirichlet(Kk, b, bc);
    lin.factorize(Kk);
    out.u.values() = lin.solve(b);
    ++out.iterations;
    res = masked_norm(elastic_residual(dofs, out.u, phi_prev, mat, true, exec), fixed);
  }
  out.residual = first > 0.0 ? res / first : 0.0;
  return out;
}

ElasticityEstimate estimate_u(const NodalField& u, const NodalField& phi_prev, const Material& mat,
                              const NeumannPredicate& neumann, int order, Exec exec) {
  const QuadMesh& mesh = u.mesh();
  const QuadRule& rule = tensor_gauss(order);
  const GaussLine& line = gauss_line(order);
  const int nl = mesh.n_leaves();
  const auto sides = mesh.sides();
  const int ns = static_cast<int>(sides.size());

  // Squared L2 norms of the cell residual and of the side jumps.
  std::vector<double> cell_r2(nl, 0.0);
  std::vector<double> side_j2(ns, 0.0);
  const double lm = mat.lambda + mat.mu;

  const auto cell_residual = [&](int e) {
    const double h = mesh.leaf(e).h;
    const auto ux = u.corner_values(e, 0);
    const auto uy = u.corner_values(e, 1);
    const auto ph = phi_prev.corner_values(e);
    const double dxy_ux = (ux[0] - ux[1] - ux[2] + ux[3]) / (h * h);
    const double dxy_uy = (uy[0] - uy[1] - uy[2] + uy[3]) / (h * h);
    double acc = 0.0;
    for (std::size_t q = 0; q < rule.points.size(); ++q) {
      const Point r = rule.points[q];
      const double phi = q1_eval(ph, r);
      const double g = degradation(phi, mat.kappa);
      const Point grad_g = degradation_slope(phi, mat.kappa) * q1_gradient(ph, r, h);
      const Sym2 s = stress(strain(u, e, r), mat.mu, mat.lambda);
      // div sigma for a Q1 displacement only sees the mixed derivatives.
      const double rx = grad_g.x * s.xx + grad_g.y * s.xy + g * lm * dxy_uy;
      const double ry = grad_g.x * s.xy + grad_g.y * s.yy + g * lm * dxy_ux;
      acc += rule.weights[q] * h * h * (rx * rx + ry * ry);
    }
    cell_r2[e] = acc;
  };

  const auto traction = [&](int leaf, Point x, Point n) {
    const Point r = to_reference(mesh.leaf(leaf), x);
    const double g = degradation(phi_prev.value(leaf, r), mat.kappa);
    const Sym2 s = g * stress(strain(u, leaf, r), mat.mu, mat.lambda);
    return Point{s.xx * n.x + s.xy * n.y, s.xy * n.x + s.yy * n.y};
  };

  const auto side_jump = [&](int k) {
    const auto& s = sides[k];
    double acc = 0.0;
    for (std::size_t q = 0; q < line.x.size(); ++q) {
      const Point x = s.a + line.x[q] * (s.b - s.a);
      const Point tm = traction(s.minus, x, s.normal);
      if (s.on_boundary()) {
        double j2 = 0.0;
        if (neumann(k, 0)) j2 += tm.x * tm.x;
        if (neumann(k, 1)) j2 += tm.y * tm.y;
        acc += line.w[q] * s.length * j2;
      } else {
        const Point d = tm - traction(s.plus, x, s.normal);
        acc += line.w[q] * s.length * dot(d, d);
      }
    }
    side_j2[k] = acc;
  };

  if (exec == Exec::parallel) {
#pragma omp parallel for schedule(static)
    for (int e = 0; e < nl; ++e) cell_residual(e);
#pragma omp parallel for schedule(static)
    for (int k = 0; k < ns; ++k) side_jump(k);
  } else {
    for (int e = 0; e < nl; ++e) cell_residual(e);
    for (int k = 0; k < ns; ++k) side_jump(k);
  }

  ElasticityEstimate est;
  const int nm = mesh.n_masters();
  est.eta1.assign(nm, 0.0);
  est.eta2.assign(nm, 0.0);
  est.eta3.assign(nm, 0.0);
  for (int m = 0; m < nm; ++m) {
    const Patch& p = mesh.patch(m);
    double r2 = 0.0, j2 = 0.0, n2 = 0.0;
    for (int e : p.cells) r2 += cell_r2[e];
    for (int k : p.interior_sides) j2 += side_j2[k];
    for (int k : p.boundary_sides) n2 += side_j2[k];
    est.eta1[m] = p.diameter * std::sqrt(r2);
    est.eta2[m] = std::sqrt(p.diameter * j2);
    est.eta3[m] = std::sqrt(p.diameter * n2);
  }
  double s1 = 0.0, s2 = 0.0, s3 = 0.0;
  for (int m = 0; m < nm; ++m) {
    s1 += est.eta1[m] * est.eta1[m];
    s2 += est.eta2[m] * est.eta2[m];
    s3 += est.eta3[m] * est.eta3[m];
  }
  est.total1 = std::sqrt(s1);
  est.total2 = std::sqrt(s2);
  est.total3 = std::sqrt(s3);
  est.total = std::sqrt(s1 + s2 + s3);
  return est;
}

}  // namespace pfadapt
