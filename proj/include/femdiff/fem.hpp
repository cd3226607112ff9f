#pragma once

#include "femdiff/core.hpp"
#include "femdiff/mesh.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <array>
#include <cmath>
#include <memory>
#include <unordered_map>
#include <vector>

namespace femdiff {

/// Nonzero Q1 basis contributions of one reference-patch point.
struct BasisStencil {
  int count = 0;
  std::array<int, 4> index{};  // ky * P + kx
  std::array<double, 4> weight{};
};

inline constexpr double kPatchSlack = 1e-12;

/// Bilinear nodal basis on a P x P lattice over [-1, 1]^2. Empty outside the patch.
inline BasisStencil reference_basis_eval(const Vec2& xi, int P) {
  require(P >= 2, ErrorKind::InvalidArgument, "patch resolution must be at least 2");
  BasisStencil s;
  if (!(std::abs(xi.x()) <= 1.0 + kPatchSlack && std::abs(xi.y()) <= 1.0 + kPatchSlack)) return s;
  const double cells = P - 1;
  auto locate = [&](double coord, int& k0, double& t) {
    const double u = std::clamp((coord + 1.0) * 0.5 * cells, 0.0, cells);
    k0 = std::min(static_cast<int>(std::floor(u)), P - 2);
    t = u - k0;
  };
  int kx = 0, ky = 0;
  double tx = 0, ty = 0;
  locate(xi.x(), kx, tx);
  locate(xi.y(), ky, ty);
  const double wx[2] = {1.0 - tx, tx};
  const double wy[2] = {1.0 - ty, ty};
  for (int dy = 0; dy < 2; ++dy) {
    for (int dx = 0; dx < 2; ++dx) {
      const double w = wx[dx] * wy[dy];
      if (w == 0.0) continue;
      s.index[s.count] = (ky + dy) * P + (kx + dx);
      s.weight[s.count] = w;
      ++s.count;
    }
  }
  return s;
}

/// Closed L-infinity neighbourhoods of radius r, in CSR layout, with projected patch coordinates.
struct NeighborTable {
  double radius = 0.0;
  GraphId graph = 0;
  std::vector<int> offsets;    // size N + 1
  std::vector<int> neighbors;  // j for each (i, j), self included
  std::vector<Vec2> xi;        // (x_j - x_i) / r

  std::size_t node_count() const { return offsets.empty() ? 0 : offsets.size() - 1; }
  int degree(std::size_t i) const { return offsets[i + 1] - offsets[i]; }
};

inline NeighborTable build_neighbor_table(const std::vector<Vec2>& positions, double r, GraphId graph = 0) {
  require(r > 0.0 && std::isfinite(r), ErrorKind::InvalidArgument, "radius must be positive");
  NeighborTable table;
  table.radius = r;
  table.graph = graph;
  const std::size_t n = positions.size();
  const double cutoff = r * (1.0 + kPatchSlack);
  const double cell = r * (1.0 + 1e-9);

  auto bucket_of = [&](const Vec2& p) {
    return std::array<long long, 2>{static_cast<long long>(std::floor(p.x() / cell)),
                                    static_cast<long long>(std::floor(p.y() / cell))};
  };
  auto key = [](long long bx, long long by) {
    // Exact packing of two 32-bit bucket coordinates; distinct buckets never share a key.
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(bx)) << 32) | static_cast<std::uint32_t>(by);
  };
  std::unordered_map<std::uint64_t, std::vector<int>> buckets;
  for (std::size_t j = 0; j < n; ++j) {
    const auto b = bucket_of(positions[j]);
    buckets[key(b[0], b[1])].push_back(static_cast<int>(j));
  }

  table.offsets.reserve(n + 1);
  table.offsets.push_back(0);
  std::vector<int> found;
  for (std::size_t i = 0; i < n; ++i) {
    found.clear();
    const auto b = bucket_of(positions[i]);
    for (long long dy = -1; dy <= 1; ++dy) {
      for (long long dx = -1; dx <= 1; ++dx) {
        auto it = buckets.find(key(b[0] + dx, b[1] + dy));
        if (it == buckets.end()) continue;
        for (int j : it->second) {
          const Vec2 d = positions[j] - positions[i];
          if (std::max(std::abs(d.x()), std::abs(d.y())) <= cutoff) found.push_back(j);
        }
      }
    }
    std::sort(found.begin(), found.end());
    for (int j : found) {
      table.neighbors.push_back(j);
      table.xi.push_back(static_cast<std::size_t>(j) == i ? Vec2::Zero().eval() : Vec2((positions[j] - positions[i]) / r));
    }
    table.offsets.push_back(static_cast<int>(table.neighbors.size()));
  }
  return table;
}

inline NeighborTable build_neighbor_table(const DualGraph& graph, double r) {
  return build_neighbor_table(graph.positions, r, graph.id);
}

/// Dense multi-channel filter: out x in x P x P weights on a reference patch of half-width `radius`.
struct FemConvFilter {
  int out_channels = 1;
  int in_channels = 1;
  int patch = 2;
  double radius = 1.0;
  std::vector<double> weights;  // ((co * in + ci) * P + ky) * P + kx

  FemConvFilter() = default;
  FemConvFilter(int out, int in, int P, double r)
      : out_channels(out), in_channels(in), patch(P), radius(r),
        weights(static_cast<std::size_t>(out) * in * P * P, 0.0) {
    require(P >= 2, ErrorKind::InvalidArgument, "patch resolution must be at least 2");
    require(r > 0.0, ErrorKind::InvalidArgument, "filter radius must be positive");
  }

  int basis_size() const { return patch * patch; }

  double& at(int co, int ci, int p) {
    return weights[(static_cast<std::size_t>(co) * in_channels + ci) * basis_size() + p];
  }
  double at(int co, int ci, int p) const {
    return weights[(static_cast<std::size_t>(co) * in_channels + ci) * basis_size() + p];
  }

  /// Weights rearranged as a (in * P^2) x out matrix with row ci * P^2 + p.
  Matrix as_matrix() const {
    const int P2 = basis_size();
    Matrix w(static_cast<Eigen::Index>(in_channels) * P2, out_channels);
    for (int co = 0; co < out_channels; ++co)
      for (int ci = 0; ci < in_channels; ++ci)
        for (int p = 0; p < P2; ++p) w(ci * P2 + p, co) = at(co, ci, p);
    return w;
  }

  void assign_from_matrix(const Matrix& w) {
    const int P2 = basis_size();
    for (int co = 0; co < out_channels; ++co)
      for (int ci = 0; ci < in_channels; ++ci)
        for (int p = 0; p < P2; ++p) at(co, ci, p) = w(ci * P2 + p, co);
  }
};

/// Per-edge vector gate m_ij = (gate b_ij) .* (mix h_j): gate is out x P^2, mix is out x in.
/// Equivalent to a dense filter with weights w[co][ci][p] = gate[co][p] * mix[co][ci].
struct VectorGateFilter {
  Matrix gate;
  Matrix mix;
  double radius = 1.0;

  int patch() const { return static_cast<int>(std::lround(std::sqrt(static_cast<double>(gate.cols())))); }

  /// Expanded (in * P^2) x out weight matrix.
  Matrix as_matrix() const {
    const Eigen::Index out = gate.rows(), P2 = gate.cols(), in = mix.cols();
    Matrix w(in * P2, out);
    for (Eigen::Index co = 0; co < out; ++co)
      for (Eigen::Index ci = 0; ci < in; ++ci)
        for (Eigen::Index p = 0; p < P2; ++p) w(ci * P2 + p, co) = gate(co, p) * mix(co, ci);
    return w;
  }

  /// Chain rule from the expanded-weight gradient to (gate, mix) gradients.
  void split_gradient(const Matrix& grad_w, Matrix& grad_gate, Matrix& grad_mix) const {
    const Eigen::Index out = gate.rows(), P2 = gate.cols(), in = mix.cols();
    grad_gate.setZero(out, P2);
    grad_mix.setZero(out, in);
    for (Eigen::Index co = 0; co < out; ++co)
      for (Eigen::Index ci = 0; ci < in; ++ci)
        for (Eigen::Index p = 0; p < P2; ++p) {
          const double g = grad_w(ci * P2 + p, co);
          grad_gate(co, p) += g * mix(co, ci);
          grad_mix(co, ci) += g * gate(co, p);
        }
  }
};

/// Sparse projection operator B with B[(p * N + i), j] = phi_p(xi_ij) / |N(i)|.
/// Applying B to an N x C field gives the per-node patch moments used by the convolution.
struct ConvStencil {
  int patch = 2;
  double radius = 0.0;
  GraphId graph = 0;
  Eigen::Index nodes = 0;
  Eigen::SparseMatrix<double, Eigen::RowMajor> basis;
};

inline ConvStencil build_conv_stencil(const NeighborTable& table, int P) {
  require(P >= 2, ErrorKind::InvalidArgument, "patch resolution must be at least 2");
  ConvStencil s;
  s.patch = P;
  s.radius = table.radius;
  s.graph = table.graph;
  s.nodes = static_cast<Eigen::Index>(table.node_count());
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(table.neighbors.size() * 4);
  for (std::size_t i = 0; i < table.node_count(); ++i) {
    const double inv_deg = 1.0 / table.degree(i);
    for (int e = table.offsets[i]; e < table.offsets[i + 1]; ++e) {
      const auto b = reference_basis_eval(table.xi[e], P);
      for (int k = 0; k < b.count; ++k) {
        triplets.emplace_back(b.index[k] * s.nodes + static_cast<Eigen::Index>(i), table.neighbors[e],
                              b.weight[k] * inv_deg);
      }
    }
  }
  s.basis.resize(static_cast<Eigen::Index>(P) * P * s.nodes, s.nodes);
  s.basis.setFromTriplets(triplets.begin(), triplets.end());
  return s;
}

namespace detail {

// N x (C * P^2) patch moments, column ci * P^2 + p.
inline Matrix patch_moments(const ConvStencil& s, const Matrix& x) {
  const Matrix stacked = s.basis * x;  // (P^2 N) x C
  return Eigen::Map<const Matrix>(stacked.data(), s.nodes, stacked.size() / s.nodes);
}

}  // namespace detail

/// y = moments(x) * W where W is the (C * P^2) x C' weight matrix.
inline Matrix conv_apply(const ConvStencil& s, const Matrix& x, const Matrix& weight_matrix) {
  require(x.rows() == s.nodes, ErrorKind::ShapeMismatch, "field rows do not match the stencil");
  require(weight_matrix.rows() == x.cols() * s.patch * s.patch, ErrorKind::ShapeMismatch,
          "weight matrix does not match input channels");
  return detail::patch_moments(s, x) * weight_matrix;
}

/// Reverse pass of conv_apply: returns grad_x, accumulates into grad_weight_matrix.
inline Matrix conv_backward(const ConvStencil& s, const Matrix& x, const Matrix& weight_matrix, const Matrix& upstream,
                            Matrix& grad_weight_matrix) {
  require(upstream.rows() == s.nodes && upstream.cols() == weight_matrix.cols(), ErrorKind::ShapeMismatch,
          "upstream shape does not match the convolution output");
  const Matrix moments = detail::patch_moments(s, x);
  if (grad_weight_matrix.size() == 0) grad_weight_matrix.setZero(weight_matrix.rows(), weight_matrix.cols());
  grad_weight_matrix.noalias() += moments.transpose() * upstream;
  const Matrix grad_moments = upstream * weight_matrix.transpose();  // N x (C P^2)
  const Eigen::Map<const Matrix> stacked(grad_moments.data(), grad_moments.size() / x.cols(), x.cols());
  return s.basis.transpose() * stacked;
}

namespace detail {

inline void check_conv_inputs(const Field& field, const FemConvFilter& filter, const NeighborTable& table) {
  require(static_cast<std::size_t>(field.nodes()) == table.node_count(), ErrorKind::GraphMismatch,
          "field and neighbour table have different node counts");
  require_same_graph(field.graph, table.graph, "field and neighbour table live on different graphs");
  require(std::abs(filter.radius - table.radius) <= 1e-12 * std::max(1.0, table.radius), ErrorKind::RadiusMismatch,
          "filter radius differs from neighbour table radius");
  require(field.channels() == filter.in_channels, ErrorKind::ShapeMismatch, "field channels differ from filter input");
}

}  // namespace detail

/// FEM convolution: out_i = sum_c sum_p w_p^(c',c) (1/|N(i)|) sum_j phi_p(xi_ij) a_j^(c).
inline Field fem_conv_forward(const Field& field, const FemConvFilter& filter, const NeighborTable& table) {
  detail::check_conv_inputs(field, filter, table);
  const auto stencil = build_conv_stencil(table, filter.patch);
  return Field(conv_apply(stencil, field.values, filter.as_matrix()), field.graph);
}

struct FemConvGradients {
  FemConvFilter weights;  // same shape as the filter
  Field field;
};

inline FemConvGradients fem_conv_vjp(const Field& field, const FemConvFilter& filter, const NeighborTable& table,
                                     const Field& upstream) {
  detail::check_conv_inputs(field, filter, table);
  require(upstream.nodes() == field.nodes() && upstream.channels() == filter.out_channels, ErrorKind::ShapeMismatch,
          "upstream shape does not match the convolution output");
  const auto stencil = build_conv_stencil(table, filter.patch);
  Matrix grad_w;
  Matrix grad_x = conv_backward(stencil, field.values, filter.as_matrix(), upstream.values, grad_w);
  FemConvGradients g{FemConvFilter(filter.out_channels, filter.in_channels, filter.patch, filter.radius),
                     Field(std::move(grad_x), field.graph)};
  g.weights.assign_from_matrix(grad_w);
  return g;
}

// ---------------------------------------------------------------------------
// P1 Poisson problem -div(grad u) = a with homogeneous Dirichlet data and P0 source.

/// Exact P1 element stiffness integrals of grad(phi_a) . grad(phi_b) over one triangle.
inline Eigen::Matrix3d element_stiffness(const Vec2& p0, const Vec2& p1, const Vec2& p2) {
  const double area = 0.5 * ((p1 - p0).x() * (p2 - p0).y() - (p1 - p0).y() * (p2 - p0).x());
  require(std::abs(area) >= 1e-14, ErrorKind::DegenerateTriangle, "triangle area below 1e-14");
  const std::array<Vec2, 3> p{p0, p1, p2};
  Eigen::Matrix<double, 2, 3> grads;
  for (int k = 0; k < 3; ++k) {
    const Vec2 e = p[(k + 2) % 3] - p[(k + 1) % 3];  // edge opposite vertex k
    grads.col(k) = Vec2(-e.y(), e.x()) / (2.0 * area);
  }
  return std::abs(area) * grads.transpose() * grads;
}

struct PoissonSystem {
  using SparseMatrix = Eigen::SparseMatrix<double>;

  SparseMatrix stiffness;             // interior x interior
  SparseMatrix load_map;              // vertices x cells, Q[v, c] = area(c) / 3
  std::vector<int> dirichlet_set;     // boundary vertices
  std::vector<int> interior_vertices; // dof -> vertex
  std::vector<int> dof_of_vertex;     // vertex -> dof or -1
  GraphId cell_graph = 0;
  GraphId vertex_graph = 0;

  struct Solver;
  std::shared_ptr<const Solver> solver;

  Eigen::Index dofs() const { return static_cast<Eigen::Index>(interior_vertices.size()); }
  Eigen::Index vertex_count() const { return load_map.rows(); }
  Eigen::Index cell_count() const { return load_map.cols(); }

  Vector solve_interior(const Vector& rhs) const;
};

struct PoissonSystem::Solver {
  static constexpr Eigen::Index kDenseBelow = 500;
  bool dense = true;
  Eigen::LLT<Matrix> dense_llt;
  Eigen::SimplicialLLT<SparseMatrix, Eigen::Lower, Eigen::AMDOrdering<int>> sparse_llt;
};

inline Vector PoissonSystem::solve_interior(const Vector& rhs) const {
  if (dofs() == 0) return Vector(0);
  Vector u = solver->dense ? Vector(solver->dense_llt.solve(rhs)) : Vector(solver->sparse_llt.solve(rhs));
  require(u.allFinite(), ErrorKind::SingularSystem, "Poisson solve produced non-finite values");
  return u;
}

inline PoissonSystem assemble_poisson(const TriMesh& mesh) {
  PoissonSystem sys;
  const auto nv = static_cast<Eigen::Index>(mesh.vertex_count());
  const auto nt = static_cast<Eigen::Index>(mesh.triangle_count());
  sys.dirichlet_set = mesh.boundary_vertices;
  sys.dof_of_vertex.assign(static_cast<std::size_t>(nv), -1);
  for (Eigen::Index v = 0; v < nv; ++v) {
    if (!mesh.is_boundary(static_cast<int>(v))) {
      sys.dof_of_vertex[v] = static_cast<int>(sys.interior_vertices.size());
      sys.interior_vertices.push_back(static_cast<int>(v));
    }
  }

  std::vector<Eigen::Triplet<double>> k_triplets, q_triplets;
  for (Eigen::Index t = 0; t < nt; ++t) {
    const auto& tri = mesh.triangles[t];
    const double area = mesh.signed_area(t);
    require(area >= 1e-14, ErrorKind::DegenerateTriangle, "triangle " + std::to_string(t) + " area below 1e-14");
    const Eigen::Matrix3d ke = element_stiffness(mesh.vertices[tri[0]], mesh.vertices[tri[1]], mesh.vertices[tri[2]]);
    for (int a = 0; a < 3; ++a) {
      q_triplets.emplace_back(tri[a], t, area / 3.0);
      const int da = sys.dof_of_vertex[tri[a]];
      if (da < 0) continue;
      for (int b = 0; b < 3; ++b) {
        const int db = sys.dof_of_vertex[tri[b]];
        if (db >= 0) k_triplets.emplace_back(da, db, ke(a, b));
      }
    }
  }
  sys.stiffness.resize(sys.dofs(), sys.dofs());
  sys.stiffness.setFromTriplets(k_triplets.begin(), k_triplets.end());
  sys.load_map.resize(nv, nt);
  sys.load_map.setFromTriplets(q_triplets.begin(), q_triplets.end());
  sys.cell_graph = dual_graph(mesh).id;
  sys.vertex_graph = vertex_graph(mesh).id;

  auto solver = std::make_shared<PoissonSystem::Solver>();
  if (sys.dofs() > 0) {
    if (sys.dofs() < PoissonSystem::Solver::kDenseBelow) {
      solver->dense = true;
      solver->dense_llt.compute(Matrix(sys.stiffness));
      require(solver->dense_llt.info() == Eigen::Success, ErrorKind::SingularSystem, "stiffness matrix not SPD");
    } else {
      solver->dense = false;
      solver->sparse_llt.compute(sys.stiffness);
      require(solver->sparse_llt.info() == Eigen::Success, ErrorKind::SingularSystem, "stiffness matrix not SPD");
    }
  }
  sys.solver = std::move(solver);
  return sys;
}

/// Solves M u = Q a on interior vertices; u = 0 on the Dirichlet set.
inline Field poisson_solve(const PoissonSystem& sys, const Field& a) {
  require(a.nodes() == sys.cell_count() && a.channels() == 1, ErrorKind::ShapeMismatch,
          "source must be one value per cell");
  require_same_graph(a.graph, sys.cell_graph, "source field is not on the cell layout of this mesh");
  const Vector load = sys.load_map * a.values.col(0);
  Vector rhs(sys.dofs());
  for (Eigen::Index d = 0; d < sys.dofs(); ++d) rhs[d] = load[sys.interior_vertices[d]];
  const Vector interior = sys.solve_interior(rhs);
  Field u = Field::zeros(sys.vertex_count(), 1, sys.vertex_graph);
  for (Eigen::Index d = 0; d < sys.dofs(); ++d) u.values(sys.interior_vertices[d], 0) = interior[d];
  return u;
}

/// Adjoint of poisson_solve: Q^T M^{-1} w restricted to interior vertices.
inline Field poisson_vjp(const PoissonSystem& sys, const Field& upstream) {
  require(upstream.nodes() == sys.vertex_count() && upstream.channels() == 1, ErrorKind::ShapeMismatch,
          "upstream must be one value per vertex");
  Vector rhs(sys.dofs());
  for (Eigen::Index d = 0; d < sys.dofs(); ++d) rhs[d] = upstream.values(sys.interior_vertices[d], 0);
  const Vector lambda = sys.solve_interior(rhs);
  Vector full = Vector::Zero(sys.vertex_count());
  for (Eigen::Index d = 0; d < sys.dofs(); ++d) full[sys.interior_vertices[d]] = lambda[d];
  return Field(Matrix(sys.load_map.transpose() * full), sys.cell_graph);
}

}  // namespace femdiff
