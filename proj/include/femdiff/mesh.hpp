#pragma once

#include "femdiff/core.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace femdiff {

using Triangle = std::array<int, 3>;

/// 2D triangulation with counter-clockwise triangles and tagged boundary vertices.
struct TriMesh {
  std::vector<Vec2> vertices;
  std::vector<Triangle> triangles;
  std::vector<int> boundary_vertices;  // sorted, unique

  std::size_t vertex_count() const { return vertices.size(); }
  std::size_t triangle_count() const { return triangles.size(); }

  double signed_area(std::size_t t) const {
    const auto& tri = triangles[t];
    const Vec2 e1 = vertices[tri[1]] - vertices[tri[0]];
    const Vec2 e2 = vertices[tri[2]] - vertices[tri[0]];
    return 0.5 * (e1.x() * e2.y() - e1.y() * e2.x());
  }

  Vec2 centroid(std::size_t t) const {
    const auto& tri = triangles[t];
    return (vertices[tri[0]] + vertices[tri[1]] + vertices[tri[2]]) / 3.0;
  }

  bool is_boundary(int v) const {
    return std::binary_search(boundary_vertices.begin(), boundary_vertices.end(), v);
  }
};

namespace detail {

inline std::uint64_t edge_key(int a, int b) {
  if (a > b) std::swap(a, b);
  return (static_cast<std::uint64_t>(a) << 32) | static_cast<std::uint32_t>(b);
}

struct EdgeIncidence {
  int a = 0, b = 0;
  std::vector<int> triangles;
};

// Mesh edges sorted by (a, b) with their incident triangles.
inline std::vector<EdgeIncidence> edge_census(const TriMesh& mesh) {
  std::unordered_map<std::uint64_t, std::size_t> index;
  std::vector<EdgeIncidence> edges;
  index.reserve(mesh.triangles.size() * 2);
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
    const auto& tri = mesh.triangles[t];
    for (int k = 0; k < 3; ++k) {
      const int a = tri[k], b = tri[(k + 1) % 3];
      const auto key = edge_key(a, b);
      auto [it, inserted] = index.try_emplace(key, edges.size());
      if (inserted) edges.push_back({std::min(a, b), std::max(a, b), {}});
      edges[it->second].triangles.push_back(static_cast<int>(t));
    }
  }
  std::sort(edges.begin(), edges.end(),
            [](const EdgeIncidence& x, const EdgeIncidence& y) { return std::tie(x.a, x.b) < std::tie(y.a, y.b); });
  return edges;
}

inline std::vector<int> boundary_from_edges(const TriMesh& mesh) {
  std::vector<int> boundary;
  for (const auto& e : edge_census(mesh)) {
    if (e.triangles.size() == 1) {
      boundary.push_back(e.a);
      boundary.push_back(e.b);
    }
  }
  std::sort(boundary.begin(), boundary.end());
  boundary.erase(std::unique(boundary.begin(), boundary.end()), boundary.end());
  return boundary;
}

}  // namespace detail

/// Throws if `mesh` violates the TriMesh invariants.
inline void validate_mesh(const TriMesh& mesh) {
  require(!mesh.triangles.empty(), ErrorKind::EmptyDomain, "mesh has no triangles");
  const int nv = static_cast<int>(mesh.vertices.size());
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
    for (int v : mesh.triangles[t]) {
      require(v >= 0 && v < nv, ErrorKind::InvalidArgument, "triangle " + std::to_string(t) + " index out of range");
    }
    require(mesh.signed_area(t) > 0.0, ErrorKind::DegenerateTriangle,
            "triangle " + std::to_string(t) + " has non-positive signed area");
  }
  for (const auto& e : detail::edge_census(mesh)) {
    require(e.triangles.size() <= 2, ErrorKind::InvalidArgument, "edge shared by more than two triangles");
  }
}

/// Unit square split into nx*ny cells, each cut along its SW-NE diagonal.
inline TriMesh triangulate_unit_square(int nx, int ny) {
  require(nx >= 1 && ny >= 1, ErrorKind::InvalidArgument, "nx and ny must be positive");
  TriMesh mesh;
  mesh.vertices.reserve(static_cast<std::size_t>((nx + 1) * (ny + 1)));
  for (int j = 0; j <= ny; ++j) {
    for (int i = 0; i <= nx; ++i) {
      mesh.vertices.emplace_back(static_cast<double>(i) / nx, static_cast<double>(j) / ny);
      if (i == 0 || i == nx || j == 0 || j == ny) mesh.boundary_vertices.push_back(j * (nx + 1) + i);
    }
  }
  mesh.triangles.reserve(static_cast<std::size_t>(2 * nx * ny));
  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      const int sw = j * (nx + 1) + i;
      const int se = sw + 1;
      const int nw = sw + nx + 1;
      const int ne = nw + 1;
      mesh.triangles.push_back({sw, se, ne});
      mesh.triangles.push_back({sw, ne, nw});
    }
  }
  return mesh;
}

using PointPredicate = std::function<bool(const Vec2&)>;

/// Keeps triangles whose centroid satisfies `keep`; vertices are compacted and the boundary recomputed.
inline TriMesh mask_cells(const TriMesh& mesh, const PointPredicate& keep) {
  std::vector<int> kept;
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
    if (keep(mesh.centroid(t))) kept.push_back(static_cast<int>(t));
  }
  require(!kept.empty(), ErrorKind::EmptyDomain, "mask keeps no triangle");

  std::vector<int> remap(mesh.vertices.size(), -1);
  TriMesh out;
  for (int t : kept) {
    Triangle tri = mesh.triangles[t];
    for (int& v : tri) {
      if (remap[v] < 0) {
        remap[v] = static_cast<int>(out.vertices.size());
        out.vertices.push_back(mesh.vertices[v]);
      }
      v = remap[v];
    }
    out.triangles.push_back(tri);
  }
  // Keep vertex order stable with respect to the source mesh.
  std::vector<int> order(out.vertices.size());
  std::vector<int> source_of(out.vertices.size());
  for (std::size_t v = 0; v < remap.size(); ++v) {
    if (remap[v] >= 0) source_of[remap[v]] = static_cast<int>(v);
  }
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int x, int y) { return source_of[x] < source_of[y]; });
  std::vector<int> new_index(order.size());
  std::vector<Vec2> sorted_vertices(order.size());
  for (std::size_t k = 0; k < order.size(); ++k) {
    new_index[order[k]] = static_cast<int>(k);
    sorted_vertices[k] = out.vertices[order[k]];
  }
  out.vertices = std::move(sorted_vertices);
  for (auto& tri : out.triangles) {
    for (int& v : tri) v = new_index[v];
  }

  // Edge connectivity via breadth-first search over shared edges.
  const auto edges = detail::edge_census(out);
  std::vector<std::vector<int>> adjacency(out.triangles.size());
  for (const auto& e : edges) {
    if (e.triangles.size() == 2) {
      adjacency[e.triangles[0]].push_back(e.triangles[1]);
      adjacency[e.triangles[1]].push_back(e.triangles[0]);
    }
  }
  std::vector<char> seen(out.triangles.size(), 0);
  std::vector<int> queue{0};
  seen[0] = 1;
  for (std::size_t head = 0; head < queue.size(); ++head) {
    for (int n : adjacency[queue[head]]) {
      if (!seen[n]) {
        seen[n] = 1;
        queue.push_back(n);
      }
    }
  }
  require(queue.size() == out.triangles.size(), ErrorKind::DisconnectedDomain,
          "masked mesh splits into several edge-connected components");

  out.boundary_vertices = detail::boundary_from_edges(out);
  return out;
}

/// Named staircase domains inside the unit square.
inline PointPredicate domain_predicate(const std::string& shape) {
  if (shape == "square") return [](const Vec2&) { return true; };
  if (shape == "lshape") return [](const Vec2& p) { return !(p.x() > 0.5 && p.y() > 0.5); };
  if (shape == "plus") {
    return [](const Vec2& p) {
      const bool band_x = std::abs(p.x() - 0.5) < 0.25;
      const bool band_y = std::abs(p.y() - 0.5) < 0.25;
      return band_x || band_y;
    };
  }
  if (shape == "hole") {
    return [](const Vec2& p) { return std::max(std::abs(p.x() - 0.5), std::abs(p.y() - 0.5)) > 0.25; };
  }
  if (shape == "circle") return [](const Vec2& p) { return (p - Vec2(0.5, 0.5)).norm() < 0.5; };
  throw Error(ErrorKind::InvalidArgument, "unknown domain shape '" + shape + "'");
}

enum class NodeKind { Centroid, Vertex };

/// Graph over P0 (triangle centroid) or P1 (vertex) nodes.
struct DualGraph {
  std::vector<Vec2> positions;
  std::vector<std::pair<int, int>> edges;  // a < b, sorted
  NodeKind kind = NodeKind::Centroid;
  GraphId id = 0;

  std::size_t node_count() const { return positions.size(); }

  Matrix positions_matrix() const {
    Matrix x(static_cast<Eigen::Index>(positions.size()), 2);
    for (std::size_t i = 0; i < positions.size(); ++i) x.row(static_cast<Eigen::Index>(i)) = positions[i].transpose();
    return x;
  }
};

inline GraphId compute_graph_id(const DualGraph& g) {
  std::uint64_t h = fnv1a("graph");
  const auto kind = static_cast<int>(g.kind);
  h = fnv1a(&kind, sizeof(kind), h);
  for (const auto& p : g.positions) h = fnv1a(p.data(), 2 * sizeof(double), h);
  for (const auto& e : g.edges) {
    const int pair[2] = {e.first, e.second};
    h = fnv1a(pair, sizeof(pair), h);
  }
  return h == 0 ? 1 : h;
}

/// One node per triangle at its centroid; one edge per interior mesh edge.
inline DualGraph dual_graph(const TriMesh& mesh) {
  DualGraph g;
  g.kind = NodeKind::Centroid;
  g.positions.reserve(mesh.triangles.size());
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t) g.positions.push_back(mesh.centroid(t));
  for (const auto& e : detail::edge_census(mesh)) {
    if (e.triangles.size() == 2) {
      g.edges.emplace_back(std::min(e.triangles[0], e.triangles[1]), std::max(e.triangles[0], e.triangles[1]));
    }
  }
  std::sort(g.edges.begin(), g.edges.end());
  g.id = compute_graph_id(g);
  return g;
}

/// One node per vertex; one edge per mesh edge.
inline DualGraph vertex_graph(const TriMesh& mesh) {
  DualGraph g;
  g.kind = NodeKind::Vertex;
  g.positions = mesh.vertices;
  for (const auto& e : detail::edge_census(mesh)) g.edges.emplace_back(e.a, e.b);
  g.id = compute_graph_id(g);
  return g;
}

inline double median_edge_length(const DualGraph& g) {
  require(!g.edges.empty(), ErrorKind::NoEdges, "graph has no edges");
  std::vector<double> lengths;
  lengths.reserve(g.edges.size());
  for (const auto& [a, b] : g.edges) lengths.push_back((g.positions[a] - g.positions[b]).norm());
  std::sort(lengths.begin(), lengths.end());
  const std::size_t n = lengths.size();
  return n % 2 == 1 ? lengths[n / 2] : 0.5 * (lengths[n / 2 - 1] + lengths[n / 2]);
}

/// Coarsening chain of graphs with Voronoi (1-NN) pooling maps between consecutive levels.
struct MeshHierarchy {
  std::vector<DualGraph> levels;
  // pool_maps[l][i]: coarse node (level l+1) owning fine node i (level l).
  std::vector<std::vector<int>> pool_maps;
  // preimages[l][c]: fine nodes of level l pooled into coarse node c, ascending.
  std::vector<std::vector<std::vector<int>>> preimages;
  std::vector<double> median_edge;
  std::vector<double> radii;
  double mu = 2.0;

  std::size_t level_count() const { return levels.size(); }
};

namespace detail {

inline int nearest_index(const Vec2& p, const std::vector<Vec2>& candidates) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    const double d = (candidates[c] - p).squaredNorm();
    if (d < best_d) {  // strict: ties resolve to the lowest index
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  return best;
}

inline std::vector<int> voronoi_assignment(const DualGraph& fine, const DualGraph& coarse) {
  std::vector<int> owner(fine.node_count());
  for (std::size_t i = 0; i < fine.node_count(); ++i) owner[i] = nearest_index(fine.positions[i], coarse.positions);

  std::vector<int> count(coarse.node_count(), 0);
  for (int c : owner) ++count[c];
  // Orphaned coarse nodes take their nearest fine node among those whose owner can spare one.
  for (std::size_t c = 0; c < coarse.node_count(); ++c) {
    if (count[c] > 0) continue;
    int best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < fine.node_count(); ++i) {
      if (count[owner[i]] < 2) continue;
      const double d = (fine.positions[i] - coarse.positions[c]).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(i);
      }
    }
    require(best >= 0, ErrorKind::InvalidHierarchy, "cannot assign a fine node to every coarse node");
    --count[owner[best]];
    owner[best] = static_cast<int>(c);
    count[c] = 1;
  }
  return owner;
}

}  // namespace detail

/// Builds pooling maps between consecutive graphs (finest first) and per-level radii mu * median edge length.
inline MeshHierarchy build_hierarchy(std::vector<DualGraph> graphs, double mu) {
  require(!graphs.empty(), ErrorKind::InvalidHierarchy, "hierarchy needs at least one level");
  require(mu > 0.0, ErrorKind::InvalidArgument, "radius multiplier must be positive");
  for (std::size_t l = 1; l < graphs.size(); ++l) {
    require(graphs[l].node_count() < graphs[l - 1].node_count(), ErrorKind::InvalidHierarchy,
            "node counts must strictly decrease from level to level");
  }
  MeshHierarchy h;
  h.mu = mu;
  h.levels = std::move(graphs);
  for (std::size_t l = 0; l + 1 < h.levels.size(); ++l) {
    auto owner = detail::voronoi_assignment(h.levels[l], h.levels[l + 1]);
    std::vector<std::vector<int>> pre(h.levels[l + 1].node_count());
    for (std::size_t i = 0; i < owner.size(); ++i) pre[owner[i]].push_back(static_cast<int>(i));
    h.pool_maps.push_back(std::move(owner));
    h.preimages.push_back(std::move(pre));
  }
  for (const auto& g : h.levels) {
    const double d = median_edge_length(g);
    h.median_edge.push_back(d);
    h.radii.push_back(mu * d);
  }
  return h;
}

/// Centroid hierarchy over a masked unit-square domain: grids nx, nx/2, ... (one per level).
inline MeshHierarchy square_hierarchy(int nx, int levels, double mu, const std::string& shape = "square") {
  require(levels >= 1, ErrorKind::InvalidArgument, "levels must be positive");
  const auto keep = domain_predicate(shape);
  std::vector<DualGraph> graphs;
  int n = nx;
  for (int l = 0; l < levels; ++l) {
    require(n >= 1, ErrorKind::InvalidHierarchy, "grid too coarse for the requested number of levels");
    graphs.push_back(dual_graph(mask_cells(triangulate_unit_square(n, n), keep)));
    n /= 2;
  }
  return build_hierarchy(std::move(graphs), mu);
}

// Mesh text format:
//   trimesh 1
//   vertices N   (N lines "x y")
//   triangles M  (M lines "i j k")
//   boundary B   (B vertex indices; optional)
inline void save_mesh(const TriMesh& mesh, std::ostream& out) {
  char buf[96];
  out << "trimesh 1\n";
  out << "vertices " << mesh.vertices.size() << "\n";
  for (const auto& v : mesh.vertices) {
    std::snprintf(buf, sizeof(buf), "%.17g %.17g\n", v.x(), v.y());
    out << buf;
  }
  out << "triangles " << mesh.triangles.size() << "\n";
  for (const auto& t : mesh.triangles) out << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
  out << "boundary " << mesh.boundary_vertices.size() << "\n";
  for (int v : mesh.boundary_vertices) out << v << '\n';
}

inline void save_mesh(const TriMesh& mesh, const std::string& path) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorKind::IOError, "cannot open '" + path + "' for writing");
  save_mesh(mesh, out);
  require(static_cast<bool>(out), ErrorKind::IOError, "write failed for '" + path + "'");
}

namespace detail {

class LineReader {
 public:
  explicit LineReader(std::istream& in) : in_(in) {}

  // Next non-empty line with comments stripped; false at end of input.
  bool next(std::istringstream& tokens) {
    std::string line;
    while (std::getline(in_, line)) {
      ++line_no_;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      tokens.clear();
      tokens.str(line);
      return true;
    }
    return false;
  }

  [[noreturn]] void fail(const std::string& message) const {
    throw Error(ErrorKind::ParseError, "line " + std::to_string(line_no_) + ": " + message);
  }

  std::size_t line() const { return line_no_; }

 private:
  std::istream& in_;
  std::size_t line_no_ = 0;
};

}  // namespace detail

/// Parses the mesh text format. Clockwise triangles are reoriented; a missing boundary section is recomputed.
inline TriMesh load_mesh(std::istream& in) {
  detail::LineReader reader(in);
  std::istringstream tok;
  std::string word;
  auto expect_section = [&](const std::string& name, bool optional) -> long long {
    if (!reader.next(tok)) {
      if (optional) return -1;
      reader.fail("unexpected end of file, expected '" + name + "'");
    }
    long long count = -1;
    if (!(tok >> word) || word != name || !(tok >> count) || count < 0) reader.fail("expected '" + name + " <count>'");
    return count;
  };

  if (!reader.next(tok)) reader.fail("empty mesh file");
  int version = 0;
  if (!(tok >> word) || word != "trimesh" || !(tok >> version) || version != 1) reader.fail("expected header 'trimesh 1'");

  TriMesh mesh;
  const auto nv = expect_section("vertices", false);
  for (long long k = 0; k < nv; ++k) {
    if (!reader.next(tok)) reader.fail("unexpected end of file in vertex list");
    double x = 0, y = 0;
    if (!(tok >> x >> y) || !std::isfinite(x) || !std::isfinite(y)) reader.fail("malformed vertex");
    mesh.vertices.emplace_back(x, y);
  }
  const auto nt = expect_section("triangles", false);
  for (long long k = 0; k < nt; ++k) {
    if (!reader.next(tok)) reader.fail("unexpected end of file in triangle list");
    long long i = 0, j = 0, l = 0;
    if (!(tok >> i >> j >> l)) reader.fail("malformed triangle");
    for (long long v : {i, j, l}) {
      if (v < 0 || v >= nv) reader.fail("triangle index " + std::to_string(v) + " out of range");
    }
    mesh.triangles.push_back({static_cast<int>(i), static_cast<int>(j), static_cast<int>(l)});
    const double area = mesh.signed_area(mesh.triangles.size() - 1);
    if (std::abs(area) < 1e-14) reader.fail("degenerate triangle");
    if (area < 0) std::swap(mesh.triangles.back()[1], mesh.triangles.back()[2]);
  }
  if (nt == 0) reader.fail("mesh has no triangles");
  const auto nb = expect_section("boundary", true);
  if (nb >= 0) {
    for (long long k = 0; k < nb; ++k) {
      if (!reader.next(tok)) reader.fail("unexpected end of file in boundary list");
      long long v = 0;
      if (!(tok >> v) || v < 0 || v >= nv) reader.fail("invalid boundary vertex");
      mesh.boundary_vertices.push_back(static_cast<int>(v));
    }
    std::sort(mesh.boundary_vertices.begin(), mesh.boundary_vertices.end());
    mesh.boundary_vertices.erase(std::unique(mesh.boundary_vertices.begin(), mesh.boundary_vertices.end()),
                                 mesh.boundary_vertices.end());
  } else {
    mesh.boundary_vertices = detail::boundary_from_edges(mesh);
  }
  if (reader.next(tok)) reader.fail("trailing content");
  return mesh;
}

inline TriMesh load_mesh(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::IOError, "cannot open '" + path + "'");
  return load_mesh(in);
}

}  // namespace femdiff
