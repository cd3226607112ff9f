#pragma once

#include "femdiff/core.hpp"
#include "femdiff/io.hpp"
#include "femdiff/mesh.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

namespace femdiff {

/// Conductivity blob generator settings. Distribution shapes are fixed; the numeric defaults are choices.
struct BlobParams {
  int max_inclusions = 3;
  double background = 1.0;
  double min_conductivity = 0.1;
  double semi_axis_min = 0.05;
  double semi_axis_max = 0.15;
  double ratio_min = 0.5;
  double ratio_max = 1.0;
  double depth_min = 0.5;
  double depth_max = 1.0;
  double containment = 2.0;  // kappa: the kappa * max(a, b) ball must lie inside the domain

  void validate() const {
    require(max_inclusions >= 1, ErrorKind::InvalidArgument, "need at least one inclusion");
    require(min_conductivity > 0.0 && min_conductivity < background, ErrorKind::InvalidArgument,
            "need 0 < min conductivity < background");
    require(semi_axis_min > 0.0 && semi_axis_min <= semi_axis_max, ErrorKind::InvalidArgument,
            "need 0 < a_min <= a_max");
    require(ratio_min > 0.0 && ratio_min <= ratio_max && depth_min >= 0.0 && depth_min <= depth_max &&
                depth_max <= 1.0 && containment >= 0.0,
            ErrorKind::InvalidArgument, "invalid ratio, depth or containment settings");
  }
};

struct Inclusion {
  Vec2 center;
  double a = 0.1;      // semi-axis along the rotated x direction
  double b = 0.1;      // semi-axis along the rotated y direction
  double angle = 0.0;  // rotation alpha
  double minimum = 0.1;
};

/// Domain membership with a bounding box for center proposals.
struct Domain {
  PointPredicate inside;
  Vec2 lo{0.0, 0.0};
  Vec2 hi{1.0, 1.0};

  bool contains(const Vec2& p) const {
    return p.x() >= lo.x() && p.x() <= hi.x() && p.y() >= lo.y() && p.y() <= hi.y() && inside(p);
  }

  static Domain from_shape(const std::string& shape) { return {domain_predicate(shape), {0.0, 0.0}, {1.0, 1.0}}; }
};

inline constexpr int kRejectionBudget = 10000;
inline constexpr int kContainmentProbes = 16;

inline std::vector<Inclusion> sample_inclusions(const BlobParams& params, const Domain& domain, Rng& rng) {
  params.validate();
  std::uniform_int_distribution<int> count(1, params.max_inclusions);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  std::vector<Inclusion> out(static_cast<std::size_t>(count(rng)));
  for (auto& inc : out) {
    inc.a = uniform(params.semi_axis_min, params.semi_axis_max);
    inc.b = uniform(params.ratio_min, params.ratio_max) * inc.a;
    inc.angle = uniform(0.0, 2.0 * std::numbers::pi);
    const double depth = uniform(params.depth_min, params.depth_max);
    inc.minimum = params.background - depth * (params.background - params.min_conductivity);
    const double reach = params.containment * std::max(inc.a, inc.b);
    bool placed = false;
    for (int attempt = 0; attempt < kRejectionBudget && !placed; ++attempt) {
      inc.center = Vec2(uniform(domain.lo.x(), domain.hi.x()), uniform(domain.lo.y(), domain.hi.y()));
      placed = domain.contains(inc.center);
      for (int k = 0; k < kContainmentProbes && placed; ++k) {
        const double t = 2.0 * std::numbers::pi * k / kContainmentProbes;
        placed = domain.contains(inc.center + reach * Vec2(std::cos(t), std::sin(t)));
      }
    }
    require(placed, ErrorKind::RejectionBudgetExceeded, "could not place an inclusion inside the domain");
  }
  return out;
}

/// min_i [ s_b - (s_b - s_i*) exp(-0.5 |A_i^{-1} R_i^T (x - mu_i)|^2) ], s_b if there are no inclusions.
inline double blob_value(const std::vector<Inclusion>& inclusions, double background, const Vec2& x) {
  double value = background;
  for (const auto& inc : inclusions) {
    const Vec2 d = x - inc.center;
    const double c = std::cos(inc.angle), s = std::sin(inc.angle);
    const double u = (c * d.x() + s * d.y()) / inc.a;
    const double v = (-s * d.x() + c * d.y()) / inc.b;
    value = std::min(value, background - (background - inc.minimum) * std::exp(-0.5 * (u * u + v * v)));
  }
  return value;
}

inline Field blob_field(const DualGraph& graph, const std::vector<Inclusion>& inclusions, double background) {
  Field f = Field::zeros(static_cast<Eigen::Index>(graph.node_count()), 1, graph.id);
  for (std::size_t i = 0; i < graph.node_count(); ++i) {
    f.values(static_cast<Eigen::Index>(i), 0) = blob_value(inclusions, background, graph.positions[i]);
  }
  return f;
}

inline Field gaussian_blob_field(const DualGraph& graph, const BlobParams& params, const Domain& domain, Rng& rng) {
  return blob_field(graph, sample_inclusions(params, domain, rng), params.background);
}

struct DatasetSummary {
  std::size_t train = 0;
  std::size_t test = 0;
  std::vector<std::string> warnings;
};

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string sample_file_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%05zu.fld", index);
  return buf;
}

inline nlohmann::json to_json(const BlobParams& p) {
  return {{"max_inclusions", p.max_inclusions}, {"background", p.background},
          {"min_conductivity", p.min_conductivity}, {"semi_axis_min", p.semi_axis_min},
          {"semi_axis_max", p.semi_axis_max}, {"ratio_min", p.ratio_min}, {"ratio_max", p.ratio_max},
          {"depth_min", p.depth_min}, {"depth_max", p.depth_max}, {"containment", p.containment}};
}

/// Writes manifest.json, train/NNNNN.fld and test/NNNNN.fld. Sample k uses the stream derive_seed(seed, "data", k).
inline DatasetSummary generate_dataset(const DualGraph& graph, const BlobParams& params, const Domain& domain,
                                       std::size_t count, double train_fraction, std::uint64_t seed,
                                       const std::filesystem::path& dir) {
  require(count >= 2, ErrorKind::InvalidArgument, "dataset needs at least two samples");
  require(train_fraction > 0.0 && train_fraction <= 1.0, ErrorKind::InvalidArgument, "train fraction in (0, 1]");
  params.validate();
  DatasetSummary summary;
  summary.train = std::min(count, static_cast<std::size_t>(std::ceil(train_fraction * static_cast<double>(count) - 1e-9)));
  summary.test = count - summary.train;
  if (summary.test == 0) summary.warnings.emplace_back("SplitDegenerate: test split is empty");

  std::error_code ec;
  std::filesystem::create_directories(dir / "train", ec);
  std::filesystem::create_directories(dir / "test", ec);
  require(!ec, ErrorKind::IOError, "cannot create dataset directory '" + dir.string() + "'");

  for (std::size_t k = 0; k < count; ++k) {
    Rng rng(derive_seed(seed, "data", k));
    const Field f = gaussian_blob_field(graph, params, domain, rng);
    const bool train = k < summary.train;
    const auto path = dir / (train ? "train" : "test") / sample_file_name(train ? k : k - summary.train);
    io::save_field(path.string(), f);
  }

  nlohmann::json manifest = {{"format", "femdiff-dataset-1"},
                             {"generator", "gaussian_blobs"},
                             {"params", to_json(params)},
                             {"seed", seed},
                             {"count", count},
                             {"train_fraction", train_fraction},
                             {"train", summary.train},
                             {"test", summary.test},
                             {"nodes", graph.node_count()},
                             {"graph_hash", hex64(graph.id)},
                             {"warnings", summary.warnings}};
  std::ofstream out(dir / "manifest.json");
  require(static_cast<bool>(out), ErrorKind::IOError, "cannot write manifest");
  out << manifest.dump(2) << "\n";
  return summary;
}

/// Reads every field of one split ("train" or "test") in file-name order.
inline std::vector<Field> load_split(const std::filesystem::path& dir, const std::string& split, GraphId graph = 0) {
  std::vector<std::filesystem::path> files;
  const auto sub = dir / split;
  require(std::filesystem::is_directory(sub), ErrorKind::IOError, "missing dataset split '" + sub.string() + "'");
  for (const auto& entry : std::filesystem::directory_iterator(sub)) {
    if (entry.path().extension() == ".fld") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<Field> out;
  for (const auto& f : files) out.push_back(io::load_field(f.string(), graph));
  return out;
}

}  // namespace femdiff
