#include "femdiff/mesh.hpp"

#include <gtest/gtest.h>

#include <map>
#include <set>
#include <sstream>

using namespace femdiff;

namespace {

// Independent census: count triangles incident to each undirected edge.
std::map<std::pair<int, int>, int> edge_counts(const TriMesh& m) {
  std::map<std::pair<int, int>, int> counts;
  for (const auto& t : m.triangles)
    for (int k = 0; k < 3; ++k) {
      int a = t[k], b = t[(k + 1) % 3];
      if (a > b) std::swap(a, b);
      ++counts[{a, b}];
    }
  return counts;
}

std::set<int> shared_vertices(const Triangle& a, const Triangle& b) {
  std::set<int> s;
  for (int x : a)
    for (int y : b)
      if (x == y) s.insert(x);
  return s;
}

template <typename F>
ErrorKind kind_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  return ErrorKind::InvalidArgument;  // sentinel, checked against a different kind below
}

}  // namespace

TEST(Triangulate, CountsFromGridSize) {
  const auto m32 = triangulate_unit_square(32, 32);
  EXPECT_EQ(m32.triangle_count(), 2048u);
  EXPECT_EQ(m32.vertex_count(), 1089u);
  const auto m11 = triangulate_unit_square(1, 1);
  EXPECT_EQ(m11.triangle_count(), 2u);
  EXPECT_EQ(m11.vertex_count(), 4u);
  const auto m21 = triangulate_unit_square(2, 1);
  EXPECT_EQ(m21.triangle_count(), 4u);
  EXPECT_EQ(m21.vertex_count(), 6u);
}

TEST(Triangulate, PositiveAreasAndEdgeSharing) {
  const auto m = triangulate_unit_square(5, 3);
  for (std::size_t t = 0; t < m.triangle_count(); ++t) EXPECT_NEAR(m.signed_area(t), 0.5 / 15.0, 1e-15);
  for (const auto& [e, c] : edge_counts(m)) {
    const Vec2& p = m.vertices[e.first];
    const Vec2& q = m.vertices[e.second];
    const bool boundary = (p.x() == 0 && q.x() == 0) || (p.x() == 1 && q.x() == 1) || (p.y() == 0 && q.y() == 0) ||
                          (p.y() == 1 && q.y() == 1);
    EXPECT_EQ(c, boundary ? 1 : 2);
  }
  EXPECT_NO_THROW(validate_mesh(m));
}

TEST(Triangulate, DiagonalRunsSouthWestToNorthEast) {
  const auto m = triangulate_unit_square(1, 1);
  // Both triangles contain the SW (0,0) and NE (1,1) corners.
  for (const auto& t : m.triangles) {
    bool sw = false, ne = false;
    for (int v : t) {
      sw |= m.vertices[v].isApprox(Vec2(0, 0));
      ne |= m.vertices[v].isApprox(Vec2(1, 1));
    }
    EXPECT_TRUE(sw && ne);
  }
}

TEST(Triangulate, BoundaryTagging) {
  const auto m = triangulate_unit_square(4, 4);
  for (std::size_t v = 0; v < m.vertex_count(); ++v) {
    const auto& p = m.vertices[v];
    const bool on = p.x() == 0.0 || p.x() == 1.0 || p.y() == 0.0 || p.y() == 1.0;
    EXPECT_EQ(m.is_boundary(static_cast<int>(v)), on);
  }
  EXPECT_EQ(m.boundary_vertices.size(), 16u);
}

TEST(MaskCells, LShapeFromTwoByTwo) {
  const auto m = mask_cells(triangulate_unit_square(2, 2), domain_predicate("lshape"));
  EXPECT_EQ(m.triangle_count(), 6u);
  EXPECT_EQ(m.vertex_count(), 8u);
  EXPECT_NO_THROW(validate_mesh(m));
}

TEST(MaskCells, SquareWithHole) {
  const auto keep = [](const Vec2& c) { return !(c.x() > 0.25 && c.x() < 0.75 && c.y() > 0.25 && c.y() < 0.75); };
  const auto m = mask_cells(triangulate_unit_square(4, 4), keep);
  EXPECT_EQ(m.triangle_count(), 24u);
  // The inner ring of vertices is now on the boundary as well.
  EXPECT_EQ(m.boundary_vertices.size(), 16u + 8u);
  EXPECT_NO_THROW(validate_mesh(m));
}

TEST(MaskCells, KeepAllIsIdentity) {
  const auto base = triangulate_unit_square(3, 2);
  const auto m = mask_cells(base, [](const Vec2&) { return true; });
  ASSERT_EQ(m.vertex_count(), base.vertex_count());
  for (std::size_t v = 0; v < m.vertex_count(); ++v) EXPECT_EQ(m.vertices[v], base.vertices[v]);
  EXPECT_EQ(m.triangles, base.triangles);
  EXPECT_EQ(m.boundary_vertices, base.boundary_vertices);
}

TEST(MaskCells, Errors) {
  const auto base = triangulate_unit_square(3, 3);
  EXPECT_EQ(kind_of([&] { mask_cells(base, [](const Vec2&) { return false; }); }), ErrorKind::EmptyDomain);
  // Two opposite corner cells only: disconnected.
  const auto corners = [](const Vec2& c) {
    return (c.x() < 1.0 / 3 && c.y() < 1.0 / 3) || (c.x() > 2.0 / 3 && c.y() > 2.0 / 3);
  };
  EXPECT_EQ(kind_of([&] { mask_cells(base, corners); }), ErrorKind::DisconnectedDomain);
}

TEST(MaskCells, DualEdgesOnlyAcrossSharedMeshEdges) {
  for (const char* shape : {"lshape", "plus", "hole", "circle"}) {
    const auto m = mask_cells(triangulate_unit_square(8, 8), domain_predicate(shape));
    const auto g = dual_graph(m);
    for (const auto& [a, b] : g.edges) EXPECT_EQ(shared_vertices(m.triangles[a], m.triangles[b]).size(), 2u) << shape;
  }
}

TEST(DualGraph, SmallCases) {
  const auto g11 = dual_graph(triangulate_unit_square(1, 1));
  EXPECT_EQ(g11.node_count(), 2u);
  EXPECT_EQ(g11.edges.size(), 1u);
  EXPECT_EQ(dual_graph(triangulate_unit_square(32, 32)).node_count(), 2048u);
  const auto g21 = dual_graph(triangulate_unit_square(2, 1));
  EXPECT_EQ(g21.node_count(), 4u);
  EXPECT_EQ(g21.edges.size(), 3u);
}

TEST(DualGraph, EdgeCountEqualsInteriorEdgesAndGraphIsSimple) {
  for (int n = 1; n <= 8; ++n) {
    const auto m = triangulate_unit_square(n, n);
    int interior = 0;
    for (const auto& [e, c] : edge_counts(m)) interior += c == 2;
    const auto g = dual_graph(m);
    EXPECT_EQ(static_cast<int>(g.edges.size()), interior);
    std::set<std::pair<int, int>> unique(g.edges.begin(), g.edges.end());
    EXPECT_EQ(unique.size(), g.edges.size());
    for (const auto& [a, b] : g.edges) EXPECT_NE(a, b);
    for (std::size_t t = 0; t < m.triangle_count(); ++t) EXPECT_EQ(g.positions[t], m.centroid(t));
  }
}

TEST(VertexGraph, SmallCases) {
  const auto g11 = vertex_graph(triangulate_unit_square(1, 1));
  EXPECT_EQ(g11.node_count(), 4u);
  EXPECT_EQ(g11.edges.size(), 5u);
  TriMesh single;
  single.vertices = {Vec2(0, 0), Vec2(1, 0), Vec2(0, 1)};
  single.triangles = {{0, 1, 2}};
  single.boundary_vertices = {0, 1, 2};
  const auto gs = vertex_graph(single);
  EXPECT_EQ(gs.node_count(), 3u);
  EXPECT_EQ(gs.edges.size(), 3u);
  const auto g22 = vertex_graph(triangulate_unit_square(2, 2));
  EXPECT_EQ(g22.node_count(), 9u);
  EXPECT_EQ(g22.edges.size(), 16u);
}

TEST(GraphId, DependsOnGeometry) {
  const auto a = dual_graph(triangulate_unit_square(4, 4));
  const auto b = dual_graph(triangulate_unit_square(4, 4));
  const auto c = dual_graph(triangulate_unit_square(4, 3));
  EXPECT_EQ(a.id, b.id);
  EXPECT_NE(a.id, c.id);
  EXPECT_NE(a.id, vertex_graph(triangulate_unit_square(4, 4)).id);
}

TEST(MedianEdge, Examples) {
  DualGraph two;
  two.positions = {Vec2(0, 0), Vec2(0.5, 0)};
  two.edges = {{0, 1}};
  EXPECT_DOUBLE_EQ(median_edge_length(two), 0.5);

  DualGraph three;
  three.positions = {Vec2(0, 0), Vec2(1, 0), Vec2(3, 0), Vec2(6, 0)};
  three.edges = {{0, 1}, {1, 2}, {2, 3}};
  EXPECT_DOUBLE_EQ(median_edge_length(three), 2.0);

  DualGraph none;
  none.positions = {Vec2(0, 0)};
  EXPECT_EQ(kind_of([&] { median_edge_length(none); }), ErrorKind::NoEdges);
}

TEST(MedianEdge, DualOfFourByFourMatchesSortedEnumeration) {
  const auto m = triangulate_unit_square(4, 4);
  // Oracle: enumerate adjacent triangle pairs by brute force over all pairs.
  std::vector<double> lengths;
  for (std::size_t a = 0; a < m.triangle_count(); ++a)
    for (std::size_t b = a + 1; b < m.triangle_count(); ++b)
      if (shared_vertices(m.triangles[a], m.triangles[b]).size() == 2)
        lengths.push_back((m.centroid(a) - m.centroid(b)).norm());
  std::sort(lengths.begin(), lengths.end());
  const std::size_t n = lengths.size();
  const double expected = n % 2 ? lengths[n / 2] : 0.5 * (lengths[n / 2 - 1] + lengths[n / 2]);
  EXPECT_DOUBLE_EQ(median_edge_length(dual_graph(m)), expected);
}

TEST(Hierarchy, StructuredChainCounts) {
  const auto h = square_hierarchy(32, 4, 2.0);
  ASSERT_EQ(h.level_count(), 4u);
  EXPECT_EQ(h.levels[0].node_count(), 2048u);
  EXPECT_EQ(h.levels[1].node_count(), 512u);
  EXPECT_EQ(h.levels[2].node_count(), 128u);
  EXPECT_EQ(h.levels[3].node_count(), 32u);
  for (std::size_t l = 0; l < h.level_count(); ++l) EXPECT_EQ(h.radii[l], 2.0 * h.median_edge[l]);
}

TEST(Hierarchy, SingleLevel) {
  const auto h = build_hierarchy({dual_graph(triangulate_unit_square(2, 2))}, 1.5);
  EXPECT_EQ(h.level_count(), 1u);
  EXPECT_TRUE(h.pool_maps.empty());
  EXPECT_TRUE(h.preimages.empty());
}

TEST(Hierarchy, RejectsNonDecreasingCounts) {
  const auto g = dual_graph(triangulate_unit_square(2, 2));
  EXPECT_EQ(kind_of([&] { build_hierarchy({g, g}, 2.0); }), ErrorKind::InvalidHierarchy);
}

TEST(Hierarchy, DuplicatedPositionsAssignTwoNearest) {
  DualGraph fine, coarse;
  coarse.positions = {Vec2(0.2, 0.5), Vec2(0.8, 0.5)};
  coarse.edges = {{0, 1}};
  fine.positions = {Vec2(0.2, 0.5), Vec2(0.8, 0.5), Vec2(0.25, 0.5), Vec2(0.7, 0.55)};
  fine.edges = {{0, 2}, {1, 3}, {2, 3}};
  const auto h = build_hierarchy({fine, coarse}, 1.0);
  // Oracle: brute-force nearest coarse node.
  for (std::size_t i = 0; i < fine.positions.size(); ++i) {
    const double d0 = (fine.positions[i] - coarse.positions[0]).norm();
    const double d1 = (fine.positions[i] - coarse.positions[1]).norm();
    EXPECT_EQ(h.pool_maps[0][i], d1 < d0 ? 1 : 0);
  }
  EXPECT_EQ(h.preimages[0][0].size(), 2u);
  EXPECT_EQ(h.preimages[0][1].size(), 2u);
}

TEST(Hierarchy, TiesGoToLowestCoarseIndex) {
  DualGraph fine, coarse;
  coarse.positions = {Vec2(0, 0), Vec2(1, 0)};
  coarse.edges = {{0, 1}};
  fine.positions = {Vec2(0.5, 0), Vec2(-0.1, 0), Vec2(1.1, 0)};
  fine.edges = {{0, 1}, {0, 2}};
  const auto h = build_hierarchy({fine, coarse}, 1.0);
  EXPECT_EQ(h.pool_maps[0][0], 0);
}

TEST(Hierarchy, OrphanedCoarseNodeStealsNearestFineNode) {
  DualGraph fine, coarse;
  coarse.positions = {Vec2(0, 0), Vec2(0.1, 0), Vec2(5, 0)};
  coarse.edges = {{0, 1}, {1, 2}};
  // Every fine node is nearest to coarse node 0; nodes 1 and 2 would be orphaned.
  fine.positions = {Vec2(-0.5, 0), Vec2(-0.6, 0), Vec2(-0.7, 0), Vec2(-0.8, 0)};
  fine.edges = {{0, 1}, {1, 2}, {2, 3}};
  const auto h = build_hierarchy({fine, coarse}, 1.0);
  for (const auto& pre : h.preimages[0]) EXPECT_FALSE(pre.empty());
}

TEST(Hierarchy, PreimagesPartitionAndConstantsSurvivePoolUnpool) {
  for (const char* shape : {"square", "lshape", "hole"}) {
    const auto h = square_hierarchy(16, 3, 2.0, shape);
    for (std::size_t l = 0; l + 1 < h.level_count(); ++l) {
      std::vector<int> seen(h.levels[l].node_count(), 0);
      for (std::size_t c = 0; c < h.preimages[l].size(); ++c) {
        EXPECT_FALSE(h.preimages[l][c].empty());
        for (int i : h.preimages[l][c]) {
          ++seen[i];
          EXPECT_EQ(h.pool_maps[l][i], static_cast<int>(c));
        }
      }
      for (int s : seen) EXPECT_EQ(s, 1);
      // Pool a constant (mean over pre-images) then unpool (broadcast): constant everywhere.
      std::vector<double> coarse(h.preimages[l].size());
      for (std::size_t c = 0; c < coarse.size(); ++c) {
        double sum = 0;
        for (std::size_t k = 0; k < h.preimages[l][c].size(); ++k) sum += 3.25;
        coarse[c] = sum / static_cast<double>(h.preimages[l][c].size());
      }
      for (std::size_t i = 0; i < h.pool_maps[l].size(); ++i) EXPECT_EQ(coarse[h.pool_maps[l][i]], 3.25);
    }
  }
}

TEST(MeshIO, RoundTripIsExact) {
  auto m = triangulate_unit_square(32, 32);
  // Perturb coordinates so the 17-digit text path is exercised on non-dyadic values.
  for (auto& v : m.vertices) v += Vec2(v.y() / 3e5, v.x() / 7e5);
  std::stringstream ss;
  save_mesh(m, ss);
  const auto back = load_mesh(ss);
  ASSERT_EQ(back.vertex_count(), m.vertex_count());
  for (std::size_t v = 0; v < m.vertex_count(); ++v) EXPECT_EQ(back.vertices[v], m.vertices[v]);
  EXPECT_EQ(back.triangles, m.triangles);
  EXPECT_EQ(back.boundary_vertices, m.boundary_vertices);
}

TEST(MeshIO, ParseErrors) {
  auto parse = [](const std::string& text) {
    std::istringstream in(text);
    return kind_of([&] { load_mesh(in); });
  };
  EXPECT_EQ(parse(""), ErrorKind::ParseError);
  EXPECT_EQ(parse("trimesh 1\nvertices 3\n0 0\n1 0\n0 1\ntriangles 1\n0 1 3\n"), ErrorKind::ParseError);
  EXPECT_EQ(parse("trimesh 1\nvertices 2\n0 0\n1 0\n"), ErrorKind::ParseError);
  EXPECT_EQ(parse("trimesh 1\nvertices 3\n0 0\n1 0\n2 0\ntriangles 1\n0 1 2\n"), ErrorKind::ParseError);
}

TEST(MeshIO, CommentsReorientationAndMissingBoundary) {
  std::istringstream in(
      "# a single triangle, listed clockwise\n"
      "trimesh 1\n"
      "vertices 3\n"
      "0 0   # origin\n"
      "0 1\n"
      "1 0\n"
      "\n"
      "triangles 1\n"
      "0 1 2\n");
  const auto m = load_mesh(in);
  EXPECT_GT(m.signed_area(0), 0.0);
  EXPECT_EQ(m.boundary_vertices, (std::vector<int>{0, 1, 2}));
}

TEST(MeshIO, ErrorCarriesLineNumber) {
  std::istringstream in("trimesh 1\nvertices 2\n0 0\n1 x\n");
  try {
    load_mesh(in);
    FAIL() << "expected a parse error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ParseError);
    EXPECT_NE(std::string(e.what()).find("line 4"), std::string::npos) << e.what();
  }
}
