#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "pfadapt/common.hpp"

namespace pfadapt {

enum class Domain { unit_square, l_shape };

Domain parse_domain(std::string_view name);
std::string_view to_string(Domain domain);

/// Geometric boundary segments. The benchmarks decide which of them carry
/// Dirichlet data.
enum class BoundaryLabel : std::uint8_t {
  interior,
  bottom,
  right,
  top,
  left,
  notch_horizontal,  // l-shape: y = 250, x in [250, 500], outward normal -y
  notch_vertical,    // l-shape: x = 250, y in [0, 250], outward normal +x
};

/// Uniform grid of equal square root cells; absent roots cut out non-convex
/// domains.
struct RootGrid {
  Domain domain = Domain::unit_square;
  int nx = 1;
  int ny = 1;
  double edge = 1.0;
  std::vector<char> present;  // nx*ny, row-major in y

  bool has_root(long ix, long iy) const {
    return ix >= 0 && iy >= 0 && ix < nx && iy < ny && present[iy * nx + ix] != 0;
  }
  bool operator==(const RootGrid&) const = default;
};

/// Finest supported refinement level below a root cell.
inline constexpr int kMaxLevel = 20;

struct HangingWeight {
  int master;
  double weight;
};

/// Region of a three-times red-refined patch: the square of edge h/8 of a
/// leaf, touching the patch node.
struct SubSquare {
  int leaf;
  Point origin;
  double edge;
};

/// Node patch omega_p together with its skeleton pieces.
struct Patch {
  int vertex = -1;
  int master = -1;
  std::vector<int> cells;           // leaves carrying the basis function of the node
  std::vector<int> interior_sides;  // sides with both neighbours inside the patch
  std::vector<int> boundary_sides;  // domain boundary sides where the basis function is nonzero
  std::vector<SubSquare> subpatch;
  double diameter = 0.0;
};

/// Quadtree of axis-aligned squares with 2:1 edge balance and one hanging
/// node per coarse edge.
class QuadMesh {
 public:
  struct Cell {
    int level = 0;
    long ix = 0;
    long iy = 0;
    int parent = -1;
    std::array<int, 4> child{-1, -1, -1, -1};  // LL, LR, UL, UR
    bool is_leaf() const { return child[0] < 0; }
  };

  struct Leaf {
    int cell = -1;
    int level = 0;
    Point origin;  // lower-left corner
    double h = 0.0;
    std::array<int, 4> corners{};  // vertex ids: LL, LR, UL, UR
  };

  struct Vertex {
    Point x;
    std::int64_t ix = 0;  // integer coordinates in units of edge / 2^kMaxLevel
    std::int64_t iy = 0;
    bool on_boundary = false;
    bool hanging = false;
    int master = -1;
    std::array<int, 2> parents{-1, -1};
  };

  /// Interface between two leaves (`plus` = -1 on the boundary). The normal
  /// points from `minus` to `plus`; `minus` is always the finer leaf.
  struct Side {
    int minus = -1;
    int plus = -1;
    std::array<int, 2> vertices{};
    Point a;
    Point b;
    Point normal;
    double length = 0.0;
    BoundaryLabel label = BoundaryLabel::interior;
    bool on_boundary() const { return plus < 0; }
  };

  /// Uniform start mesh for a benchmark domain. `target_h` is the cell
  /// diameter; the edge is chosen so the domain is tiled exactly.
  static QuadMesh build(Domain domain, double target_h);

  explicit QuadMesh(RootGrid grid);

  /// Splits the marked leaves and, transitively, whatever is needed to keep
  /// the 2:1 balance.
  QuadMesh refined(std::span<const int> marked_leaves) const;
  QuadMesh refined_uniformly(int times = 1) const;

  const RootGrid& roots() const { return roots_; }
  Domain domain() const { return roots_.domain; }

  int n_leaves() const { return static_cast<int>(leaves_.size()); }
  const Leaf& leaf(int i) const { return leaves_[i]; }
  std::span<const Leaf> leaves() const { return leaves_; }

  int n_vertices() const { return static_cast<int>(vertices_.size()); }
  const Vertex& vertex(int i) const { return vertices_[i]; }
  std::span<const Vertex> vertices() const { return vertices_; }

  int n_masters() const { return static_cast<int>(master_vertex_.size()); }
  int master_vertex(int master) const { return master_vertex_[master]; }

  int n_hanging() const { return n_masters_hanging_; }

  std::span<const Side> sides() const { return sides_; }
  const Side& side(int i) const { return sides_[i]; }

  /// Expansion of a vertex value in master values.
  std::span<const HangingWeight> expansion(int vertex) const {
    return {expansion_data_.data() + expansion_offset_[vertex],
            expansion_data_.data() + expansion_offset_[vertex + 1]};
  }

  /// Patch of a master node.
  const Patch& patch(int master) const { return patches_[master]; }

  /// Patch of a vertex. Throws InputError for hanging vertices.
  const Patch& patch_of(int vertex) const;

  /// Leaf containing the point (closed cells), -1 when outside the domain.
  int locate(Point p) const;
  int locate_integer(std::int64_t ix, std::int64_t iy) const;

  Point to_physical(std::int64_t ix, std::int64_t iy) const;

  double domain_area() const;
  int max_level() const;
  int min_level() const;

  /// True when every leaf of this mesh is a union of leaves of `fine`.
  bool is_refined_by(const QuadMesh& fine) const;

  BoundaryLabel label_boundary(Point midpoint, Point normal) const;

 private:
  QuadMesh() = default;

  static std::uint64_t cell_key(int level, long ix, long iy);
  int find_cell(int level, long ix, long iy) const;
  bool inside_domain(int level, long ix, long iy) const;
  void split(int cell);
  void split_balanced(int cell);
  void finalize();
  void build_sides();
  void build_patches();

  RootGrid roots_;
  std::vector<Cell> cells_;
  std::unordered_map<std::uint64_t, int> cell_index_;
  std::vector<int> root_cells_;  // per root slot, -1 if absent

  std::vector<Leaf> leaves_;
  std::vector<int> leaf_of_cell_;
  std::vector<Vertex> vertices_;
  std::vector<int> master_vertex_;
  int n_masters_hanging_ = 0;
  std::vector<int> expansion_offset_;
  std::vector<HangingWeight> expansion_data_;
  std::vector<Side> sides_;
  std::vector<Patch> patches_;
};

using MeshPtr = std::shared_ptr<const QuadMesh>;

inline MeshPtr share(QuadMesh mesh) { return std::make_shared<const QuadMesh>(std::move(mesh)); }

}  // namespace pfadapt
