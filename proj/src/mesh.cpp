#include "pfadapt/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <string>

namespace pfadapt {

namespace {

constexpr std::int64_t kUnit = std::int64_t{1} << kMaxLevel;

std::uint64_t point_key(std::int64_t x, std::int64_t y) {
  return (static_cast<std::uint64_t>(x) << 32) | static_cast<std::uint64_t>(y);
}

}  // namespace

Domain parse_domain(std::string_view name) {
  if (name == "unit-square" || name == "unit_square") return Domain::unit_square;
  if (name == "l-shape" || name == "l_shape" || name == "lshape") return Domain::l_shape;
  throw InputError("unknown domain '" + std::string(name) + "'");
}

std::string_view to_string(Domain domain) {
  switch (domain) {
    case Domain::unit_square: return "unit-square";
    case Domain::l_shape: return "l-shape";
  }
  return "?";
}

QuadMesh QuadMesh::build(Domain domain, double target_h) {
  if (!(target_h > 0.0) || !std::isfinite(target_h)) {
    throw InputError("target mesh size must be positive, got " + std::to_string(target_h));
  }
  RootGrid grid;
  grid.domain = domain;
  const double side = domain == Domain::unit_square ? 1.0 : 500.0;
  long n = std::lround(side * std::sqrt(2.0) / target_h);
  n = std::max<long>(n, 1);
  if (domain == Domain::l_shape && n % 2 != 0) ++n;  // the notch corner must be a grid line
  if (n > 4096) throw InputError("target mesh size too small for a start mesh");
  grid.nx = static_cast<int>(n);
  grid.ny = static_cast<int>(n);
  grid.edge = side / static_cast<double>(n);
  grid.present.assign(static_cast<std::size_t>(n * n), 1);
  if (domain == Domain::l_shape) {
    for (long iy = 0; iy < n / 2; ++iy)
      for (long ix = n / 2; ix < n; ++ix) grid.present[iy * n + ix] = 0;
  }
  return QuadMesh(std::move(grid));
}

QuadMesh::QuadMesh(RootGrid grid) : roots_(std::move(grid)) {
  if (roots_.nx <= 0 || roots_.ny <= 0 || !(roots_.edge > 0.0) ||
      roots_.present.size() != static_cast<std::size_t>(roots_.nx) * roots_.ny) {
    throw InputError("malformed root grid");
  }
  root_cells_.assign(roots_.present.size(), -1);
  for (int iy = 0; iy < roots_.ny; ++iy) {
    for (int ix = 0; ix < roots_.nx; ++ix) {
      if (!roots_.has_root(ix, iy)) continue;
      Cell c;
      c.ix = ix;
      c.iy = iy;
      const int id = static_cast<int>(cells_.size());
      cells_.push_back(c);
      cell_index_.emplace(cell_key(0, ix, iy), id);
      root_cells_[iy * roots_.nx + ix] = id;
    }
  }
  if (cells_.empty()) throw InputError("root grid has no cells");
  finalize();
}

std::uint64_t QuadMesh::cell_key(int level, long ix, long iy) {
  return (static_cast<std::uint64_t>(level) << 56) | (static_cast<std::uint64_t>(ix) << 28) |
         static_cast<std::uint64_t>(iy);
}

int QuadMesh::find_cell(int level, long ix, long iy) const {
  if (ix < 0 || iy < 0) return -1;
  auto it = cell_index_.find(cell_key(level, ix, iy));
  return it == cell_index_.end() ? -1 : it->second;
}

bool QuadMesh::inside_domain(int level, long ix, long iy) const {
  if (ix < 0 || iy < 0) return false;
  return roots_.has_root(ix >> level, iy >> level);
}

void QuadMesh::split(int cell) {
  const Cell parent = cells_[cell];
  for (int k = 0; k < 4; ++k) {
    Cell c;
    c.level = parent.level + 1;
    c.ix = 2 * parent.ix + (k & 1);
    c.iy = 2 * parent.iy + (k >> 1);
    c.parent = cell;
    const int id = static_cast<int>(cells_.size());
    cells_.push_back(c);
    cell_index_.emplace(cell_key(c.level, c.ix, c.iy), id);
    cells_[cell].child[k] = id;
  }
}

void QuadMesh::split_balanced(int cell) {
  if (!cells_[cell].is_leaf()) return;
  const int level = cells_[cell].level;
  if (level >= kMaxLevel) throw InputError("refinement exceeds the maximal quadtree depth");
  static constexpr int dx[4] = {-1, 1, 0, 0};
  static constexpr int dy[4] = {0, 0, -1, 1};
  for (int d = 0; d < 4; ++d) {
    const long nx = cells_[cell].ix + dx[d];
    const long ny = cells_[cell].iy + dy[d];
    if (!inside_domain(level, nx, ny)) continue;
    if (find_cell(level, nx, ny) >= 0) continue;
    // The neighbour region is covered by a coarser leaf, which must be one
    // level up by the balance invariant.
    const int coarse = find_cell(level - 1, nx >> 1, ny >> 1);
    if (coarse < 0) throw NumericalError("quadtree balance invariant violated");
    split_balanced(coarse);
  }
  split(cell);
}

QuadMesh QuadMesh::refined(std::span<const int> marked_leaves) const {
  QuadMesh out;
  out.roots_ = roots_;
  out.cells_ = cells_;
  out.cell_index_ = cell_index_;
  out.root_cells_ = root_cells_;
  std::vector<int> targets;
  targets.reserve(marked_leaves.size());
  for (int leaf : marked_leaves) {
    if (leaf < 0 || leaf >= n_leaves()) throw InputError("marked cell is not a leaf of this mesh");
    targets.push_back(leaves_[leaf].cell);
  }
  std::sort(targets.begin(), targets.end());
  targets.erase(std::unique(targets.begin(), targets.end()), targets.end());
  for (int cell : targets) out.split_balanced(cell);
  out.finalize();
  return out;
}

QuadMesh QuadMesh::refined_uniformly(int times) const {
  QuadMesh mesh = *this;
  for (int t = 0; t < times; ++t) {
    std::vector<int> all(mesh.n_leaves());
    for (int i = 0; i < mesh.n_leaves(); ++i) all[i] = i;
    mesh = mesh.refined(all);
  }
  return mesh;
}

Point QuadMesh::to_physical(std::int64_t ix, std::int64_t iy) const {
  const double s = roots_.edge / static_cast<double>(kUnit);
  return {static_cast<double>(ix) * s, static_cast<double>(iy) * s};
}

void QuadMesh::finalize() {
  // Leaves in depth-first order from the roots, children LL, LR, UL, UR.
  leaves_.clear();
  leaf_of_cell_.assign(cells_.size(), -1);
  std::vector<int> stack;
  for (int slot = static_cast<int>(root_cells_.size()) - 1; slot >= 0; --slot) {
    if (root_cells_[slot] >= 0) stack.push_back(root_cells_[slot]);
  }
  std::vector<std::array<std::int64_t, 2>> leaf_origin;
  while (!stack.empty()) {
    const int c = stack.back();
    stack.pop_back();
    const Cell& cell = cells_[c];
    if (!cell.is_leaf()) {
      for (int k = 3; k >= 0; --k) stack.push_back(cell.child[k]);
      continue;
    }
    Leaf leaf;
    leaf.cell = c;
    leaf.level = cell.level;
    const std::int64_t size = kUnit >> cell.level;
    const std::int64_t x0 = cell.ix * size;
    const std::int64_t y0 = cell.iy * size;
    leaf.origin = to_physical(x0, y0);
    leaf.h = roots_.edge / static_cast<double>(std::int64_t{1} << cell.level);
    leaf_of_cell_[c] = static_cast<int>(leaves_.size());
    leaves_.push_back(leaf);
    leaf_origin.push_back({x0, y0});
  }

  // Vertices, numbered by (y, x).
  std::vector<std::array<std::int64_t, 2>> coords;
  coords.reserve(leaves_.size() * 2);
  for (std::size_t i = 0; i < leaves_.size(); ++i) {
    const std::int64_t s = kUnit >> leaves_[i].level;
    const auto [x0, y0] = leaf_origin[i];
    coords.push_back({y0, x0});
    coords.push_back({y0, x0 + s});
    coords.push_back({y0 + s, x0});
    coords.push_back({y0 + s, x0 + s});
  }
  std::sort(coords.begin(), coords.end());
  coords.erase(std::unique(coords.begin(), coords.end()), coords.end());
  std::unordered_map<std::uint64_t, int> vertex_of;
  vertex_of.reserve(coords.size() * 2);
  vertices_.assign(coords.size(), Vertex{});
  for (std::size_t v = 0; v < coords.size(); ++v) {
    Vertex& vert = vertices_[v];
    vert.iy = coords[v][0];
    vert.ix = coords[v][1];
    vert.x = to_physical(vert.ix, vert.iy);
    const auto has = [&](std::int64_t x, std::int64_t y) {
      return x >= 0 && y >= 0 && roots_.has_root(static_cast<long>(x >> kMaxLevel), static_cast<long>(y >> kMaxLevel));
    };
    vert.on_boundary = !(has(vert.ix - 1, vert.iy - 1) && has(vert.ix, vert.iy - 1) &&
                         has(vert.ix - 1, vert.iy) && has(vert.ix, vert.iy));
    vertex_of.emplace(point_key(vert.ix, vert.iy), static_cast<int>(v));
  }
  const auto vid = [&](std::int64_t x, std::int64_t y) {
    auto it = vertex_of.find(point_key(x, y));
    return it == vertex_of.end() ? -1 : it->second;
  };
  for (std::size_t i = 0; i < leaves_.size(); ++i) {
    const std::int64_t s = kUnit >> leaves_[i].level;
    const auto [x0, y0] = leaf_origin[i];
    leaves_[i].corners = {vid(x0, y0), vid(x0 + s, y0), vid(x0, y0 + s), vid(x0 + s, y0 + s)};
  }

  // Hanging vertices sit at the midpoint of a coarser leaf edge.
  static constexpr int edge_corners[4][2] = {{0, 1}, {2, 3}, {0, 2}, {1, 3}};
  for (std::size_t i = 0; i < leaves_.size(); ++i) {
    const auto& c = leaves_[i].corners;
    for (const auto& e : edge_corners) {
      const Vertex& a = vertices_[c[e[0]]];
      const Vertex& b = vertices_[c[e[1]]];
      const int mid = vid((a.ix + b.ix) / 2, (a.iy + b.iy) / 2);
      if (mid < 0) continue;
      vertices_[mid].hanging = true;
      vertices_[mid].parents = {c[e[0]], c[e[1]]};
    }
  }

  master_vertex_.clear();
  n_masters_hanging_ = 0;
  for (int v = 0; v < n_vertices(); ++v) {
    if (vertices_[v].hanging) {
      ++n_masters_hanging_;
      continue;
    }
    vertices_[v].master = static_cast<int>(master_vertex_.size());
    master_vertex_.push_back(v);
  }

  // Constraint expansion; a parent may itself hang, so resolve recursively.
  std::vector<std::vector<HangingWeight>> expansion(vertices_.size());
  std::vector<char> done(vertices_.size(), 0);
  std::function<const std::vector<HangingWeight>&(int)> resolve = [&](int v) -> const std::vector<HangingWeight>& {
    if (done[v]) return expansion[v];
    const Vertex& vert = vertices_[v];
    if (!vert.hanging) {
      expansion[v] = {{vert.master, 1.0}};
    } else {
      std::map<int, double> acc;
      for (int parent : vert.parents) {
        for (const auto& w : resolve(parent)) acc[w.master] += 0.5 * w.weight;
      }
      for (const auto& [m, w] : acc) expansion[v].push_back({m, w});
    }
    done[v] = 1;
    return expansion[v];
  };
  expansion_offset_.assign(vertices_.size() + 1, 0);
  expansion_data_.clear();
  for (int v = 0; v < n_vertices(); ++v) {
    const auto& e = resolve(v);
    expansion_data_.insert(expansion_data_.end(), e.begin(), e.end());
    expansion_offset_[v + 1] = static_cast<int>(expansion_data_.size());
  }

  build_sides();
  build_patches();
}

BoundaryLabel QuadMesh::label_boundary(Point midpoint, Point normal) const {
  const double width = roots_.nx * roots_.edge;
  const double height = roots_.ny * roots_.edge;
  const double tol = 1e-9 * std::max(width, height);
  if (normal.y < -0.5) return std::abs(midpoint.y) <= tol ? BoundaryLabel::bottom : BoundaryLabel::notch_horizontal;
  if (normal.x > 0.5) return std::abs(midpoint.x - width) <= tol ? BoundaryLabel::right : BoundaryLabel::notch_vertical;
  if (normal.y > 0.5) return BoundaryLabel::top;
  return BoundaryLabel::left;
}

void QuadMesh::build_sides() {
  sides_.clear();
  static constexpr int dx[4] = {-1, 1, 0, 0};
  static constexpr int dy[4] = {0, 0, -1, 1};
  // Corners spanning the edge in each direction, listed in increasing coordinate.
  static constexpr int edge_of_dir[4][2] = {{0, 2}, {1, 3}, {0, 1}, {2, 3}};
  for (int i = 0; i < n_leaves(); ++i) {
    const Leaf& lf = leaves_[i];
    const Cell& cell = cells_[lf.cell];
    for (int d = 0; d < 4; ++d) {
      const long nx = cell.ix + dx[d];
      const long ny = cell.iy + dy[d];
      Side s;
      s.vertices = {lf.corners[edge_of_dir[d][0]], lf.corners[edge_of_dir[d][1]]};
      s.a = vertices_[s.vertices[0]].x;
      s.b = vertices_[s.vertices[1]].x;
      s.normal = {static_cast<double>(dx[d]), static_cast<double>(dy[d])};
      s.length = lf.h;
      s.minus = i;
      if (!inside_domain(cell.level, nx, ny)) {
        s.plus = -1;
        s.label = label_boundary(0.5 * (s.a + s.b), s.normal);
        sides_.push_back(s);
        continue;
      }
      const int same = find_cell(cell.level, nx, ny);
      if (same >= 0) {
        if (!cells_[same].is_leaf()) continue;  // finer neighbours own this side
        if (d == 0 || d == 2) continue;         // recorded from the left/bottom leaf
        s.plus = leaf_of_cell_[same];
        sides_.push_back(s);
        continue;
      }
      const int coarse = find_cell(cell.level - 1, nx >> 1, ny >> 1);
      if (coarse < 0 || !cells_[coarse].is_leaf()) throw NumericalError("quadtree balance invariant violated");
      s.plus = leaf_of_cell_[coarse];
      sides_.push_back(s);
    }
  }
}

void QuadMesh::build_patches() {
  patches_.assign(master_vertex_.size(), Patch{});
  for (int m = 0; m < n_masters(); ++m) {
    patches_[m].master = m;
    patches_[m].vertex = master_vertex_[m];
  }
  for (int i = 0; i < n_leaves(); ++i) {
    for (int corner : leaves_[i].corners) {
      for (const auto& w : expansion(corner)) {
        auto& cells = patches_[w.master].cells;
        if (cells.empty() || cells.back() != i) cells.push_back(i);
      }
    }
  }
  for (int m = 0; m < n_masters(); ++m) {
    Patch& p = patches_[m];
    std::sort(p.cells.begin(), p.cells.end());
    p.cells.erase(std::unique(p.cells.begin(), p.cells.end()), p.cells.end());
    const int v = p.vertex;
    const Point x = vertices_[v].x;
    double diam2 = 0.0;
    for (std::size_t a = 0; a < p.cells.size(); ++a) {
      const Leaf& la = leaves_[p.cells[a]];
      for (int ca : la.corners) {
        for (std::size_t b = a; b < p.cells.size(); ++b) {
          for (int cb : leaves_[p.cells[b]].corners) {
            const Point d = vertices_[ca].x - vertices_[cb].x;
            diam2 = std::max(diam2, dot(d, d));
          }
        }
      }
      for (int k = 0; k < 4; ++k) {
        if (la.corners[k] != v) continue;
        const double e = la.h / 8.0;
        const Point origin{(k & 1) ? x.x - e : x.x, (k >> 1) ? x.y - e : x.y};
        p.subpatch.push_back({p.cells[a], origin, e});
      }
    }
    p.diameter = std::sqrt(diam2);
  }
  for (int s = 0; s < static_cast<int>(sides_.size()); ++s) {
    const Side& side = sides_[s];
    if (side.on_boundary()) {
      for (int sv : side.vertices) {
        const int m = vertices_[sv].master;
        if (m >= 0) patches_[m].boundary_sides.push_back(s);
      }
      continue;
    }
    // Interior side: belongs to every patch containing both neighbours.
    const auto& lm = leaves_[side.minus].corners;
    const auto& lp = leaves_[side.plus].corners;
    std::vector<int> masters;
    for (int c : lm)
      for (const auto& w : expansion(c)) masters.push_back(w.master);
    std::sort(masters.begin(), masters.end());
    masters.erase(std::unique(masters.begin(), masters.end()), masters.end());
    for (int m : masters) {
      bool in_plus = false;
      for (int c : lp)
        for (const auto& w : expansion(c)) in_plus = in_plus || w.master == m;
      if (in_plus) patches_[m].interior_sides.push_back(s);
    }
  }
}

const Patch& QuadMesh::patch_of(int vertex) const {
  if (vertex < 0 || vertex >= n_vertices()) throw InputError("vertex index out of range");
  if (vertices_[vertex].hanging) throw InputError("patch requested for a hanging vertex");
  return patches_[vertices_[vertex].master];
}

int QuadMesh::locate_integer(std::int64_t ix, std::int64_t iy) const {
  const long rx0 = static_cast<long>(ix >> kMaxLevel);
  const long ry0 = static_cast<long>(iy >> kMaxLevel);
  for (long ry : {ry0, ry0 - 1}) {
    for (long rx : {rx0, rx0 - 1}) {
      if (!roots_.has_root(rx, ry)) continue;
      const std::int64_t lx = ix - (static_cast<std::int64_t>(rx) << kMaxLevel);
      const std::int64_t ly = iy - (static_cast<std::int64_t>(ry) << kMaxLevel);
      if (lx < 0 || ly < 0 || lx > kUnit || ly > kUnit) continue;
      int c = root_cells_[ry * roots_.nx + rx];
      while (!cells_[c].is_leaf()) {
        const Cell& cell = cells_[c];
        const std::int64_t size = kUnit >> (cell.level + 1);
        const std::int64_t mx = (2 * cell.ix + 1) * size;
        const std::int64_t my = (2 * cell.iy + 1) * size;
        c = cell.child[(ix >= mx ? 1 : 0) + (iy >= my ? 2 : 0)];
      }
      return leaf_of_cell_[c];
    }
  }
  return -1;
}

int QuadMesh::locate(Point p) const {
  const double width = roots_.nx * roots_.edge;
  const double height = roots_.ny * roots_.edge;
  const double tol = 1e-12 * std::max(width, height);
  if (p.x < -tol || p.y < -tol || p.x > width + tol || p.y > height + tol) return -1;
  const double scale = static_cast<double>(kUnit) / roots_.edge;
  const auto ix = static_cast<std::int64_t>(std::floor(std::clamp(p.x, 0.0, width) * scale));
  const auto iy = static_cast<std::int64_t>(std::floor(std::clamp(p.y, 0.0, height) * scale));
  return locate_integer(ix, iy);
}

double QuadMesh::domain_area() const {
  const auto n = std::count(roots_.present.begin(), roots_.present.end(), 1);
  return static_cast<double>(n) * roots_.edge * roots_.edge;
}

int QuadMesh::max_level() const {
  int l = 0;
  for (const auto& lf : leaves_) l = std::max(l, lf.level);
  return l;
}

int QuadMesh::min_level() const {
  int l = kMaxLevel;
  for (const auto& lf : leaves_) l = std::min(l, lf.level);
  return l;
}

bool QuadMesh::is_refined_by(const QuadMesh& fine) const {
  if (!(roots_ == fine.roots_)) return false;
  for (const auto& lf : leaves_) {
    const Cell& c = cells_[lf.cell];
    if (fine.find_cell(c.level, c.ix, c.iy) < 0) return false;
  }
  return true;
}

}  // namespace pfadapt
