#include "pfadapt/oracle.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <sstream>

namespace pfadapt::oracle {

KktPoint enumerate_vi(const Eigen::MatrixXd& A, const Eigen::VectorXd& b, const Eigen::VectorXd& o) {
  const int n = static_cast<int>(b.size());
  if (n > 16) throw InputError("enumerate_vi handles at most 16 unknowns");
  if (A.rows() != n || A.cols() != n || o.size() != n) throw InputError("enumerate_vi: size mismatch");
  const double scale = b.cwiseAbs().maxCoeff() + A.cwiseAbs().maxCoeff() * o.cwiseAbs().maxCoeff() + 1e-300;
  const double tol = 1e-12 * scale;

  std::vector<KktPoint> found;
  for (unsigned mask = 0; mask < (1u << n); ++mask) {
    std::vector<int> fr, ac;
    for (int i = 0; i < n; ++i) ((mask >> i) & 1u ? ac : fr).push_back(i);
    Eigen::VectorXd phi = o;
    if (!fr.empty()) {
      const int k = static_cast<int>(fr.size());
      Eigen::MatrixXd Aff(k, k);
      Eigen::VectorXd rhs(k);
      for (int i = 0; i < k; ++i) {
        rhs[i] = b[fr[i]];
        for (int j = 0; j < k; ++j) Aff(i, j) = A(fr[i], fr[j]);
        for (int j : ac) rhs[i] -= A(fr[i], j) * o[j];
      }
      const Eigen::VectorXd x = Aff.llt().solve(rhs);
      for (int i = 0; i < k; ++i) phi[fr[i]] = x[i];
    }
    const Eigen::VectorXd lambda = b - A * phi;
    bool ok = true;
    for (int i : fr) ok = ok && phi[i] <= o[i] + 1e-12 * (1.0 + std::abs(o[i]));
    for (int i : ac) ok = ok && lambda[i] >= -tol;
    if (!ok) continue;
    KktPoint p{phi, lambda, std::vector<char>(n, 0)};
    for (int i : ac) p.active[i] = 1;
    found.push_back(std::move(p));
  }
  if (found.empty()) throw NumericalError("enumerate_vi: no KKT point found");
  for (const auto& p : found) {
    if ((p.phi - found.front().phi).cwiseAbs().maxCoeff() > 1e-9) {
      throw NumericalError("enumerate_vi: several distinct KKT points");
    }
  }
  return found.front();
}

namespace {

struct Gauss6 {
  double x[6];
  double w[6];
  Gauss6() {
    // Nodes and weights of the 6-point Gauss-Legendre rule on [-1, 1].
    const double t[3] = {0.2386191860831969, 0.6612093864662645, 0.9324695142031521};
    const double v[3] = {0.4679139345726910, 0.3607615730481386, 0.1713244923791704};
    for (int i = 0; i < 3; ++i) {
      x[2 * i] = 0.5 * (1 - t[i]);
      x[2 * i + 1] = 0.5 * (1 + t[i]);
      w[2 * i] = w[2 * i + 1] = 0.5 * v[i];
    }
  }
};

int find_vertex(const QuadMesh& mesh, Point x) {
  for (int v = 0; v < mesh.n_vertices(); ++v) {
    if (norm(mesh.vertex(v).x - x) < 1e-9 * (1.0 + norm(x))) return v;
  }
  return -1;
}

// Shape values and reference derivatives of corner a (LL, LR, UL, UR).
double shape(int a, double s, double t) {
  const double sx = (a & 1) ? s : 1 - s;
  const double ty = (a & 2) ? t : 1 - t;
  return sx * ty;
}
double shape_ds(int a, double t) { return ((a & 1) ? 1.0 : -1.0) * ((a & 2) ? t : 1 - t); }
double shape_dt(int a, double s) { return ((a & 2) ? 1.0 : -1.0) * ((a & 1) ? s : 1 - s); }

}  // namespace

Eigen::MatrixXd geometric_condensation(const QuadMesh& mesh) {
  const int nv = mesh.n_vertices();
  Eigen::MatrixXd T = Eigen::MatrixXd::Zero(nv, mesh.n_masters());
  std::vector<int> state(nv, 0);  // 0 todo, 1 in progress, 2 done
  std::function<void(int)> fill = [&](int v) {
    if (state[v] == 2) return;
    if (state[v] == 1) throw NumericalError("cyclic hanging-vertex dependency");
    state[v] = 1;
    const Point x = mesh.vertex(v).x;
    int ea = -1, eb = -1;
    for (const auto& lf : mesh.leaves()) {
      const double x0 = lf.origin.x, y0 = lf.origin.y, h = lf.h, tol = 1e-9 * h;
      const bool inside_x = x.x > x0 + tol && x.x < x0 + h - tol;
      const bool inside_y = x.y > y0 + tol && x.y < y0 + h - tol;
      if (inside_x && (std::abs(x.y - y0) < tol || std::abs(x.y - y0 - h) < tol)) {
        ea = find_vertex(mesh, {x0, x.y});
        eb = find_vertex(mesh, {x0 + h, x.y});
      } else if (inside_y && (std::abs(x.x - x0) < tol || std::abs(x.x - x0 - h) < tol)) {
        ea = find_vertex(mesh, {x.x, y0});
        eb = find_vertex(mesh, {x.x, y0 + h});
      }
      if (ea >= 0) break;
    }
    if (ea >= 0 && eb >= 0) {
      fill(ea);
      fill(eb);
      T.row(v) = 0.5 * (T.row(ea) + T.row(eb));
    } else {
      if (mesh.vertex(v).master < 0) throw NumericalError("geometric and topological hanging detection disagree");
      T(v, mesh.vertex(v).master) = 1.0;
    }
    state[v] = 2;
  };
  for (int v = 0; v < nv; ++v) fill(v);
  return T;
}

DenseSystem dense_assembly(const QuadMesh& mesh, const std::function<double(int, Point)>& reaction, double diffusion,
                           double source) {
  const Eigen::MatrixXd T = geometric_condensation(mesh);
  const int nm = mesh.n_masters();
  DenseSystem sys{Eigen::MatrixXd::Zero(nm, nm), Eigen::VectorXd::Zero(nm)};
  const Gauss6 g;
  for (int e = 0; e < mesh.n_leaves(); ++e) {
    const auto& lf = mesh.leaf(e);
    Eigen::Matrix4d K = Eigen::Matrix4d::Zero();
    Eigen::Vector4d f = Eigen::Vector4d::Zero();
    for (int i = 0; i < 6; ++i) {
      for (int j = 0; j < 6; ++j) {
        const double s = g.x[i], t = g.x[j];
        const double w = g.w[i] * g.w[j] * lf.h * lf.h;
        const double c = reaction ? reaction(e, {s, t}) : 0.0;
        for (int a = 0; a < 4; ++a) {
          f[a] += w * source * shape(a, s, t);
          for (int bb = 0; bb < 4; ++bb) {
            const double grad = (shape_ds(a, t) * shape_ds(bb, t) + shape_dt(a, s) * shape_dt(bb, s)) / (lf.h * lf.h);
            K(a, bb) += w * (c * shape(a, s, t) * shape(bb, s, t) + diffusion * grad);
          }
        }
      }
    }
    Eigen::MatrixXd Te(4, nm);
    for (int a = 0; a < 4; ++a) Te.row(a) = T.row(lf.corners[a]);
    sys.A += Te.transpose() * K * Te;
    sys.b += Te.transpose() * f;
  }
  return sys;
}

Eigen::MatrixXd dense_elastic_assembly(const QuadMesh& mesh, const std::function<double(int, Point)>& g, double mu,
                                       double lambda) {
  const Eigen::MatrixXd T = geometric_condensation(mesh);
  const int nm = mesh.n_masters();
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(2 * nm, 2 * nm);
  const Gauss6 q;
  for (int e = 0; e < mesh.n_leaves(); ++e) {
    const auto& lf = mesh.leaf(e);
    Eigen::Matrix<double, 8, 8> K = Eigen::Matrix<double, 8, 8>::Zero();
    for (int i = 0; i < 6; ++i) {
      for (int j = 0; j < 6; ++j) {
        const double s = q.x[i], t = q.x[j];
        const double w = q.w[i] * q.w[j] * lf.h * lf.h * (g ? g(e, {s, t}) : 1.0);
        // Strain of the basis function (corner a, component k) as a full 2x2 matrix.
        std::array<Eigen::Matrix2d, 8> eps;
        for (int a = 0; a < 4; ++a) {
          const Eigen::Vector2d grad(shape_ds(a, t) / lf.h, shape_dt(a, s) / lf.h);
          for (int k = 0; k < 2; ++k) {
            Eigen::Matrix2d G = Eigen::Matrix2d::Zero();
            G.row(k) = grad.transpose();
            eps[2 * a + k] = 0.5 * (G + G.transpose());
          }
        }
        for (int r = 0; r < 8; ++r) {
          const Eigen::Matrix2d sig = 2 * mu * eps[r] + lambda * eps[r].trace() * Eigen::Matrix2d::Identity();
          for (int c = 0; c < 8; ++c) K(r, c) += w * (sig.array() * eps[c].array()).sum();
        }
      }
    }
    Eigen::MatrixXd Te = Eigen::MatrixXd::Zero(8, 2 * nm);
    for (int a = 0; a < 4; ++a) {
      for (int m = 0; m < nm; ++m) {
        Te(2 * a, 2 * m) = T(lf.corners[a], m);
        Te(2 * a + 1, 2 * m + 1) = T(lf.corners[a], m);
      }
    }
    A += Te.transpose() * K * Te;
  }
  return A;
}

double reference_error(const NodalField& coarse, const NodalField& reference, Norm norm, const ReferenceData& data) {
  const QuadMesh& fine = reference.mesh();
  const QuadMesh& cm = coarse.mesh();
  if (coarse.components() != reference.components()) throw InputError("reference_error: component mismatch");
  if (!cm.is_refined_by(fine)) throw InputError("reference_error: meshes are not nested");
  if (norm == Norm::eps_energy && !data.coeffs) throw InputError("reference_error: eps-energy needs coefficients");
  const QuadRule& rule = tensor_gauss(3);
  const int nc = reference.components();
  std::vector<double> per_leaf(fine.n_leaves(), 0.0);
#pragma omp parallel for schedule(static)
  for (int f = 0; f < fine.n_leaves(); ++f) {
    const auto& lf = fine.leaf(f);
    const int e = cm.locate(to_physical(lf, {0.5, 0.5}));
    const auto& le = cm.leaf(e);
    double local = 0.0;
    for (std::size_t q = 0; q < rule.points.size(); ++q) {
      const Point r = rule.points[q];
      const Point x = to_physical(lf, r);
      const Point rc = to_reference(le, x);
      const double w = rule.weights[q] * lf.h * lf.h;
      double val[2], gx[2], gy[2];
      for (int k = 0; k < nc; ++k) {
        val[k] = reference.value(f, r, k) - coarse.value(e, rc, k);
        const Point g = reference.gradient(f, r, k) - coarse.gradient(e, rc, k);
        gx[k] = g.x;
        gy[k] = g.y;
      }
      switch (norm) {
        case Norm::h1:
          for (int k = 0; k < nc; ++k) local += w * (val[k] * val[k] + gx[k] * gx[k] + gy[k] * gy[k]);
          break;
        case Norm::eps_energy: {
          const VICoefficients& c = *data.coeffs;
          const double react = c.mesh.get() == &fine ? c.reaction(f, r) : c.reaction_at(x);
          local += w * (c.diffusion() * (gx[0] * gx[0] + gy[0] * gy[0]) + react * val[0] * val[0]);
          break;
        }
        case Norm::u_energy: {
          const Sym2 E{gx[0], gy[1], 0.5 * (gy[0] + gx[1])};
          const double gphi = data.degradation_phi ? degradation(data.degradation_phi->at(x), data.material.kappa) : 1.0;
          local += w * gphi * ddot(stress(E, data.material.mu, data.material.lambda), E);
          break;
        }
      }
    }
    per_leaf[f] = local;
  }
  double acc = 0.0;
  for (double x : per_leaf) acc += x;
  return std::sqrt(acc);
}

}  // namespace pfadapt::oracle
