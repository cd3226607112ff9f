#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace femdiff {

enum class ErrorKind {
  InvalidArgument,
  EmptyDomain,
  DisconnectedDomain,
  InvalidHierarchy,
  NoEdges,
  ParseError,
  IOError,
  GraphMismatch,
  RadiusMismatch,
  ShapeMismatch,
  DegenerateTriangle,
  SingularSystem,
  NotPositiveDefinite,
  NonFiniteState,
  NonFiniteLoss,
  RejectionBudgetExceeded,
  ConfigError,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::EmptyDomain: return "EmptyDomain";
    case ErrorKind::DisconnectedDomain: return "DisconnectedDomain";
    case ErrorKind::InvalidHierarchy: return "InvalidHierarchy";
    case ErrorKind::NoEdges: return "NoEdges";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::IOError: return "IOError";
    case ErrorKind::GraphMismatch: return "GraphMismatch";
    case ErrorKind::RadiusMismatch: return "RadiusMismatch";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::DegenerateTriangle: return "DegenerateTriangle";
    case ErrorKind::SingularSystem: return "SingularSystem";
    case ErrorKind::NotPositiveDefinite: return "NotPositiveDefinite";
    case ErrorKind::NonFiniteState: return "NonFiniteState";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::RejectionBudgetExceeded: return "RejectionBudgetExceeded";
    case ErrorKind::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) throw Error(kind, message);
}

using Vec2 = Eigen::Vector2d;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Identifier of the graph a field lives on. Zero means "unbound".
using GraphId = std::uint64_t;

/// Node-wise multi-channel function values: one row per node, one column per channel.
struct Field {
  Matrix values;
  GraphId graph = 0;

  Field() = default;
  Field(Matrix v, GraphId g = 0) : values(std::move(v)), graph(g) {}

  static Field zeros(Eigen::Index nodes, Eigen::Index channels, GraphId g = 0) {
    return Field(Matrix::Zero(nodes, channels), g);
  }

  Eigen::Index nodes() const { return values.rows(); }
  Eigen::Index channels() const { return values.cols(); }
  bool all_finite() const { return values.allFinite(); }
};

inline void require_same_graph(GraphId a, GraphId b, const char* what) {
  if (a != 0 && b != 0 && a != b) throw Error(ErrorKind::GraphMismatch, what);
}

// FNV-1a over raw bytes; used for graph identities and config hashes.
inline std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t fnv1a(std::string_view text, std::uint64_t h = 0xcbf29ce484222325ULL) {
  return fnv1a(text.data(), text.size(), h);
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed of the named stream `name[index]` under a root seed.
inline std::uint64_t derive_seed(std::uint64_t root, std::string_view name, std::uint64_t index = 0) {
  return splitmix64(splitmix64(root ^ fnv1a(name)) + index);
}

using Rng = std::mt19937_64;

inline Vector standard_normal(Eigen::Index n, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector z(n);
  for (Eigen::Index i = 0; i < n; ++i) z[i] = normal(rng);
  return z;
}

}  // namespace femdiff
