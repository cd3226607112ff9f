#pragma once

#include "femdiff/core.hpp"

#include <cmath>
#include <vector>

namespace femdiff {

inline double rbf_kernel(const Vec2& x, const Vec2& y, double length_scale) {
  require(length_scale > 0.0, ErrorKind::InvalidArgument, "length scale must be positive");
  return std::exp(-(x - y).squaredNorm() / (2.0 * length_scale * length_scale));
}

inline Matrix rbf_kernel_matrix(const std::vector<Vec2>& positions, double length_scale) {
  const auto n = static_cast<Eigen::Index>(positions.size());
  Matrix k(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    k(i, i) = 1.0;
    for (Eigen::Index j = 0; j < i; ++j) {
      k(i, j) = k(j, i) = rbf_kernel(positions[i], positions[j], length_scale);
    }
  }
  return k;
}

/// Covariance operator C as a node-kernel matrix K together with L, L L^T = K + jitter I.
struct CovarianceFactor {
  double length_scale = 0.1;
  double jitter = 1e-6;
  Matrix kernel_matrix;
  Matrix chol;  // lower triangular
  GraphId graph = 0;

  Eigen::Index size() const { return kernel_matrix.rows(); }
  Matrix covariance() const { return chol * chol.transpose(); }
};

inline constexpr int kMaxJitterDoublings = 8;

inline CovarianceFactor build_covariance(const std::vector<Vec2>& positions, double length_scale,
                                         double jitter = 1e-6, GraphId graph = 0) {
  require(length_scale > 0.0, ErrorKind::InvalidArgument, "length scale must be positive");
  require(jitter >= 0.0, ErrorKind::InvalidArgument, "jitter must be non-negative");
  CovarianceFactor f;
  f.length_scale = length_scale;
  f.graph = graph;
  f.kernel_matrix = rbf_kernel_matrix(positions, length_scale);
  const auto n = f.kernel_matrix.rows();
  double j = jitter;
  for (int attempt = 0; attempt <= kMaxJitterDoublings; ++attempt) {
    Eigen::LLT<Matrix> llt(f.kernel_matrix + j * Matrix::Identity(n, n));
    if (llt.info() == Eigen::Success && llt.matrixL().toDenseMatrix().allFinite()) {
      f.jitter = j;
      f.chol = llt.matrixL();
      return f;
    }
    j = j > 0.0 ? 2.0 * j : 1e-12;
  }
  throw Error(ErrorKind::NotPositiveDefinite, "kernel matrix not positive definite after jitter escalation");
}

/// L z for an injected standard-normal vector z.
inline Field grf_from_normal(const CovarianceFactor& f, const Vector& z) {
  require(z.size() == f.size(), ErrorKind::ShapeMismatch, "normal vector length mismatch");
  const Vector lz = f.chol.triangularView<Eigen::Lower>() * z;
  return Field(Matrix(lz), f.graph);
}

inline Field sample_grf(const CovarianceFactor& f, Rng& rng) {
  return grf_from_normal(f, standard_normal(f.size(), rng));
}

inline std::vector<Field> sample_grf(const CovarianceFactor& f, std::size_t count, Rng& rng) {
  std::vector<Field> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) out.push_back(sample_grf(f, rng));
  return out;
}

/// K v with the jitter excluded.
inline Field apply_C(const CovarianceFactor& f, const Field& v) {
  require(v.nodes() == f.size(), ErrorKind::ShapeMismatch, "field length differs from covariance size");
  require_same_graph(v.graph, f.graph, "field and covariance live on different graphs");
  return Field(Matrix(f.kernel_matrix * v.values), v.graph);
}

/// L^{-1} v.
inline Vector whiten(const CovarianceFactor& f, const Vector& v) {
  return f.chol.triangularView<Eigen::Lower>().solve(v);
}

}  // namespace femdiff
