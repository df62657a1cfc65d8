#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>

#include "pfadapt/mesh.hpp"
#include "pfadapt/oracle.hpp"

using namespace pfadapt;

namespace {

QuadMesh grid(int n) { return QuadMesh::build(Domain::unit_square, std::sqrt(2.0) / n); }

int leaf_at(const QuadMesh& m, double x, double y) { return m.locate({x, y}); }

int vertex_at(const QuadMesh& m, Point p) {
  for (int v = 0; v < m.n_vertices(); ++v)
    if (norm(m.vertex(v).x - p) < 1e-12) return v;
  return -1;
}

// Every interior side: levels differ by at most one, and the side lies on the
// boundary of both leaves.
void check_sides(const QuadMesh& m) {
  for (const auto& s : m.sides()) {
    const auto& a = m.leaf(s.minus);
    CHECK(std::abs(norm(s.b - s.a) - s.length) < 1e-12);
    CHECK(s.length <= a.h * (1 + 1e-12));
    if (s.on_boundary()) continue;
    const auto& b = m.leaf(s.plus);
    CHECK(std::abs(a.level - b.level) <= 1);
    for (const auto* lf : {&a, &b}) {
      for (Point x : {s.a, s.b}) {
        const double dx = std::min(std::abs(x.x - lf->origin.x), std::abs(x.x - lf->origin.x - lf->h));
        const double dy = std::min(std::abs(x.y - lf->origin.y), std::abs(x.y - lf->origin.y - lf->h));
        CHECK(std::min(dx, dy) < 1e-12);
        CHECK(x.x >= lf->origin.x - 1e-12);
        CHECK(x.x <= lf->origin.x + lf->h + 1e-12);
        CHECK(x.y >= lf->origin.y - 1e-12);
        CHECK(x.y <= lf->origin.y + lf->h + 1e-12);
      }
    }
  }
}

double leaf_area(const QuadMesh& m) {
  double a = 0.0;
  for (const auto& lf : m.leaves()) a += lf.h * lf.h;
  return a;
}

// Hanging vertices sit strictly inside an edge of a coarser leaf; at most one
// per such edge.
void check_one_hanging_per_edge(const QuadMesh& m) {
  for (const auto& lf : m.leaves()) {
    int edge_count[4] = {0, 0, 0, 0};
    for (const auto& v : m.vertices()) {
      const double tol = 1e-12;
      const bool in_x = v.x.x > lf.origin.x + tol && v.x.x < lf.origin.x + lf.h - tol;
      const bool in_y = v.x.y > lf.origin.y + tol && v.x.y < lf.origin.y + lf.h - tol;
      if (in_x && std::abs(v.x.y - lf.origin.y) < tol) ++edge_count[0];
      if (in_x && std::abs(v.x.y - lf.origin.y - lf.h) < tol) ++edge_count[1];
      if (in_y && std::abs(v.x.x - lf.origin.x) < tol) ++edge_count[2];
      if (in_y && std::abs(v.x.x - lf.origin.x - lf.h) < tol) ++edge_count[3];
    }
    for (int c : edge_count) CHECK(c <= 1);
  }
}

}  // namespace

TEST_CASE("start meshes") {
  SUBCASE("unit square with diameter 0.044") {
    const QuadMesh m = QuadMesh::build(Domain::unit_square, 0.044);
    CHECK(m.n_leaves() == 32 * 32);
    CHECK(m.leaf(0).h == doctest::Approx(1.0 / 32).epsilon(1e-14));
    CHECK(m.leaf(0).h * std::sqrt(2.0) == doctest::Approx(0.0442).epsilon(1e-3));
    CHECK(m.n_masters() == 33 * 33);
    CHECK(m.n_hanging() == 0);
  }
  SUBCASE("unit square coarsest") {
    const QuadMesh m = QuadMesh::build(Domain::unit_square, std::sqrt(2.0));
    CHECK(m.n_leaves() == 1);
    CHECK(m.n_masters() == 4);
  }
  SUBCASE("l-shape with diameter 17.67") {
    const QuadMesh m = QuadMesh::build(Domain::l_shape, 17.67);
    // Smallest even root count (the re-entrant corner must be a grid line)
    // whose diameter stays within 5 % of the target.
    int n = 2;
    while (500.0 / n * std::sqrt(2.0) > 1.05 * 17.67) n += 2;
    CHECK(500.0 / n == doctest::Approx(12.5));
    int expected = 0;
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < n; ++i) {
        const double cx = (i + 0.5) * 500.0 / n, cy = (j + 0.5) * 500.0 / n;
        if (!(cx > 250.0 && cy < 250.0)) ++expected;
      }
    CHECK(m.n_leaves() == expected);
    CHECK(expected == 1200);
    CHECK(leaf_area(m) == doctest::Approx(m.domain_area()).epsilon(1e-12));
    CHECK(m.domain_area() == doctest::Approx(0.75 * 500.0 * 500.0));
    check_sides(m);
  }
  SUBCASE("invalid sizes") {
    CHECK_THROWS_AS(QuadMesh::build(Domain::unit_square, 0.0), InputError);
    CHECK_THROWS_AS(QuadMesh::build(Domain::unit_square, -1.0), InputError);
    CHECK_THROWS_AS(parse_domain("disk"), InputError);
    CHECK(parse_domain("l-shape") == Domain::l_shape);
  }
}

TEST_CASE("boundary labels") {
  const QuadMesh m = QuadMesh::build(Domain::l_shape, 500.0 * std::sqrt(2.0) / 4);
  std::map<BoundaryLabel, double> length;
  for (const auto& s : m.sides())
    if (s.on_boundary()) length[s.label] += s.length;
  CHECK(length[BoundaryLabel::bottom] == doctest::Approx(250.0));
  CHECK(length[BoundaryLabel::right] == doctest::Approx(250.0));
  CHECK(length[BoundaryLabel::top] == doctest::Approx(500.0));
  CHECK(length[BoundaryLabel::left] == doctest::Approx(500.0));
  CHECK(length[BoundaryLabel::notch_horizontal] == doctest::Approx(250.0));
  CHECK(length[BoundaryLabel::notch_vertical] == doctest::Approx(250.0));
  for (const auto& s : m.sides()) {
    if (s.label != BoundaryLabel::notch_horizontal) continue;
    CHECK(s.normal.y == doctest::Approx(-1.0));
  }
}

TEST_CASE("refinement") {
  SUBCASE("2x2 mesh, one cell marked") {
    const QuadMesh m = grid(2);
    const int marked[] = {leaf_at(m, 0.25, 0.25)};
    const QuadMesh r = m.refined(marked);
    CHECK(r.n_leaves() == 7);
    CHECK(r.n_hanging() == 2);  // one per shared fine/coarse edge
    check_sides(r);
    check_one_hanging_per_edge(r);
  }
  SUBCASE("all marked is uniform") {
    const QuadMesh m = grid(2);
    std::vector<int> all(m.n_leaves());
    for (int i = 0; i < m.n_leaves(); ++i) all[i] = i;
    const QuadMesh r = m.refined(all);
    CHECK(r.n_leaves() == 16);
    CHECK(r.n_hanging() == 0);
    CHECK(r.n_masters() == 25);
    const QuadMesh u = m.refined_uniformly(2);
    CHECK(u.n_leaves() == 64);
    CHECK(u.n_hanging() == 0);
  }
  SUBCASE("corner cell of 4x4 twice forces neighbour splits") {
    const QuadMesh m = grid(4);
    const int first[] = {leaf_at(m, 0.1, 0.1)};
    const QuadMesh r1 = m.refined(first);
    const int second[] = {leaf_at(r1, 0.2, 0.2)};  // child touching the coarse neighbours
    CHECK(r1.leaf(second[0]).level == 1);
    const QuadMesh r2 = r1.refined(second);
    check_sides(r2);
    check_one_hanging_per_edge(r2);
    // Level-2 cells along x = 0.25 and y = 0.25 force the level-0 neighbours to split.
    CHECK(r2.leaf(leaf_at(r2, 0.3, 0.2)).level >= 1);
    CHECK(r2.leaf(leaf_at(r2, 0.2, 0.3)).level >= 1);
    CHECK(r2.n_leaves() > r1.n_leaves() + 3);
  }
  SUBCASE("marking a non-leaf index is rejected") {
    const QuadMesh m = grid(2);
    const int bad[] = {7};
    CHECK_THROWS_AS(m.refined(bad), InputError);
  }
}

TEST_CASE("random refinement sequences keep the mesh invariants") {
  std::mt19937 rng(7);
  for (int trial = 0; trial < 6; ++trial) {
    QuadMesh m = trial % 2 ? grid(3) : QuadMesh::build(Domain::l_shape, 500.0 * std::sqrt(2.0) / 4);
    for (int pass = 0; pass < 4; ++pass) {
      std::vector<int> marked;
      std::uniform_int_distribution<int> pick(0, m.n_leaves() - 1);
      for (int k = 0; k < 3; ++k) marked.push_back(pick(rng));
      m = m.refined(marked);
      CHECK(leaf_area(m) == doctest::Approx(m.domain_area()).epsilon(1e-12));
      check_sides(m);
      check_one_hanging_per_edge(m);
    }
    REQUIRE(m.n_leaves() <= 1000);
    // Patch consistency against the geometric condensation oracle: a leaf is
    // in omega_p exactly when phi_p does not vanish on it.
    const Eigen::MatrixXd T = oracle::geometric_condensation(m);
    for (int p = 0; p < m.n_masters(); ++p) {
      const Patch& patch = m.patch(p);
      std::set<int> cells(patch.cells.begin(), patch.cells.end());
      for (int e = 0; e < m.n_leaves(); ++e) {
        bool support = false, closure = false;
        for (int c : m.leaf(e).corners) {
          support = support || std::abs(T(c, p)) > 0.0;
          closure = closure || c == patch.vertex;
        }
        CHECK(support == (cells.count(e) == 1));
        if (closure) CHECK(cells.count(e) == 1);
      }
      // Diameter bound against the incident cells.
      double hmax = 0.0;
      for (int e : patch.cells) hmax = std::max(hmax, m.leaf(e).h * std::sqrt(2.0));
      CHECK(patch.diameter <= 3.0 * hmax + 1e-12);
    }
  }
}

TEST_CASE("patches") {
  SUBCASE("interior node of a uniform mesh") {
    const QuadMesh m = grid(4);
    const int v = vertex_at(m, {0.5, 0.5});
    const Patch& p = m.patch_of(v);
    CHECK(p.cells.size() == 4);
    CHECK(p.interior_sides.size() == 4);
    for (int s : p.interior_sides) {
      const auto& sd = m.side(s);
      CHECK((sd.vertices[0] == v || sd.vertices[1] == v));
    }
    CHECK(p.boundary_sides.empty());
    CHECK(p.subpatch.size() == 4);
    for (const auto& sq : p.subpatch) CHECK(sq.edge == doctest::Approx(0.25 / 8));
    CHECK(p.diameter == doctest::Approx(0.5 * std::sqrt(2.0)));
  }
  SUBCASE("boundary node") {
    const QuadMesh m = grid(4);
    const int v = vertex_at(m, {0.5, 0.0});
    const Patch& p = m.patch_of(v);
    CHECK(p.cells.size() == 2);
    CHECK(p.boundary_sides.size() == 2);
    CHECK(p.interior_sides.size() == 1);
    for (int s : p.boundary_sides) CHECK(m.side(s).label == BoundaryLabel::bottom);
  }
  SUBCASE("node next to a hanging side") {
    const QuadMesh m0 = grid(2);
    const int marked[] = {leaf_at(m0, 0.25, 0.25)};
    const QuadMesh m = m0.refined(marked);
    // (0.5, 0.5) is a coarse corner whose edges carry the hanging vertices.
    const int v = vertex_at(m, {0.5, 0.5});
    const Patch& p = m.patch_of(v);
    // The four fine cells along the two hanging edges carry phi_p through the
    // hanging vertices, plus the coarse cells and the fine cell at (0.5, 0.5).
    std::set<int> cells(p.cells.begin(), p.cells.end());
    CHECK(cells.count(leaf_at(m, 0.375, 0.375)) == 1);
    CHECK(cells.count(leaf_at(m, 0.375, 0.125)) == 1);
    CHECK(cells.count(leaf_at(m, 0.125, 0.375)) == 1);
    CHECK(cells.count(leaf_at(m, 0.125, 0.125)) == 0);
    CHECK(cells.size() == 6);
    // Both fine half-sides of each hanging edge belong to the interior skeleton.
    int half_sides = 0;
    for (int s : p.interior_sides) {
      const auto& sd = m.side(s);
      if (sd.length < 0.3 && (std::abs(sd.a.x - 0.5) < 1e-12 && std::abs(sd.b.x - 0.5) < 1e-12)) ++half_sides;
      if (sd.length < 0.3 && (std::abs(sd.a.y - 0.5) < 1e-12 && std::abs(sd.b.y - 0.5) < 1e-12)) ++half_sides;
    }
    CHECK(half_sides == 4);
    // Hanging vertices have no patch.
    const int h = vertex_at(m, {0.25, 0.5});
    REQUIRE(h >= 0);
    CHECK(m.vertex(h).hanging);
    CHECK_THROWS_AS(m.patch_of(h), InputError);
  }
}

TEST_CASE("point location and nesting") {
  const QuadMesh m = grid(4);
  CHECK(m.locate({-0.1, 0.5}) == -1);
  const int e = m.locate({0.3, 0.6});
  REQUIRE(e >= 0);
  const auto& lf = m.leaf(e);
  CHECK(lf.origin.x <= 0.3);
  CHECK(lf.origin.x + lf.h >= 0.3);
  const QuadMesh l = QuadMesh::build(Domain::l_shape, 500.0 * std::sqrt(2.0) / 4);
  CHECK(l.locate({400.0, 100.0}) == -1);
  CHECK(l.locate({100.0, 100.0}) >= 0);
  const QuadMesh f = m.refined_uniformly(1);
  CHECK(m.is_refined_by(f));
  CHECK(!f.is_refined_by(m));
}
