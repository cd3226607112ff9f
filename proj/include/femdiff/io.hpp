#pragma once

#include "femdiff/core.hpp"
#include "femdiff/fem.hpp"
#include "femdiff/mesh.hpp"
#include "femdiff/network.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

namespace femdiff::io {

namespace detail {

template <typename T>
void write_le(std::ostream& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  std::array<unsigned char, sizeof(T)> bytes{};
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  out.write(reinterpret_cast<const char*>(bytes.data()), sizeof(T));
}

template <typename T>
T read_le(std::istream& in, const std::string& what) {
  std::array<unsigned char, sizeof(T)> bytes{};
  in.read(reinterpret_cast<char*>(bytes.data()), sizeof(T));
  if (in.gcount() != static_cast<std::streamsize>(sizeof(T))) {
    throw Error(ErrorKind::ParseError, "truncated input while reading " + what);
  }
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  T value;
  std::memcpy(&value, bytes.data(), sizeof(T));
  return value;
}

inline void expect_magic(std::istream& in, std::string_view magic) {
  std::string got(magic.size(), '\0');
  in.read(got.data(), static_cast<std::streamsize>(magic.size()));
  require(in.gcount() == static_cast<std::streamsize>(magic.size()) && got == magic, ErrorKind::ParseError,
          "bad magic, expected '" + std::string(magic) + "'");
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::IOError, "cannot open '" + path + "' for writing");
  return out;
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::IOError, "cannot open '" + path + "'");
  return in;
}

}  // namespace detail

// Field file: "FLD1", u64 N, u32 C, N*C f64 row-major.
inline void write_field(std::ostream& out, const Field& f) {
  out.write("FLD1", 4);
  detail::write_le<std::uint64_t>(out, static_cast<std::uint64_t>(f.nodes()));
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(f.channels()));
  for (Eigen::Index i = 0; i < f.nodes(); ++i)
    for (Eigen::Index c = 0; c < f.channels(); ++c) detail::write_le<double>(out, f.values(i, c));
}

inline Field read_field(std::istream& in) {
  detail::expect_magic(in, "FLD1");
  const auto n = detail::read_le<std::uint64_t>(in, "node count");
  const auto c = detail::read_le<std::uint32_t>(in, "channel count");
  require(n < (1ULL << 32) && c < (1U << 16), ErrorKind::ParseError, "implausible field dimensions");
  Field f = Field::zeros(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(c));
  for (Eigen::Index i = 0; i < f.nodes(); ++i)
    for (Eigen::Index k = 0; k < f.channels(); ++k) f.values(i, k) = detail::read_le<double>(in, "field values");
  return f;
}

inline void save_field(const std::string& path, const Field& f) {
  auto out = detail::open_out(path);
  write_field(out, f);
  require(static_cast<bool>(out), ErrorKind::IOError, "write failed for '" + path + "'");
}

inline Field load_field(const std::string& path, GraphId graph = 0) {
  auto in = detail::open_in(path);
  Field f = read_field(in);
  f.graph = graph;
  return f;
}

// Filter file: "FCW1", u32 C', C, P, then weights in [c'][c][ky][kx] order.
inline void write_filter(std::ostream& out, const FemConvFilter& filter) {
  out.write("FCW1", 4);
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(filter.out_channels));
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(filter.in_channels));
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(filter.patch));
  for (double w : filter.weights) detail::write_le<double>(out, w);
}

/// Radius is a property of the hierarchy level, not of the file.
inline FemConvFilter read_filter(std::istream& in, double radius) {
  detail::expect_magic(in, "FCW1");
  const auto out_c = detail::read_le<std::uint32_t>(in, "output channels");
  const auto in_c = detail::read_le<std::uint32_t>(in, "input channels");
  const auto patch = detail::read_le<std::uint32_t>(in, "patch resolution");
  require(out_c >= 1 && in_c >= 1 && patch >= 2 && out_c < 65536 && in_c < 65536 && patch < 1024,
          ErrorKind::ParseError, "implausible filter dimensions");
  FemConvFilter f(static_cast<int>(out_c), static_cast<int>(in_c), static_cast<int>(patch), radius);
  for (double& w : f.weights) w = detail::read_le<double>(in, "filter weights");
  return f;
}

// Checkpoint: "GRIF1", u32 version, hyperparameters, frequencies, then named tensors in declaration order.
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void write_checkpoint(std::ostream& out, const MiniGrifdirNet& net) {
  const auto& cfg = net.config();
  out.write("GRIF1", 5);
  detail::write_le<std::uint32_t>(out, kCheckpointVersion);
  for (int v : {cfg.channels, cfg.hidden, cfg.levels, cfg.convs_per_level, cfg.patch, cfg.time_dim,
                static_cast<int>(cfg.mixing)}) {
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(v));
  }
  for (double v : {cfg.mu, cfg.omega_scale, cfg.sigma_min, cfg.sigma_max, cfg.sigma_data}) detail::write_le<double>(out, v);
  for (Eigen::Index k = 0; k < net.frequencies().size(); ++k) detail::write_le<double>(out, net.frequencies()[k]);
  const auto& params = net.parameters();
  detail::write_le<std::uint64_t>(out, params.infos().size());
  for (const auto& info : params.infos()) {
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(info.name.size()));
    out.write(info.name.data(), static_cast<std::streamsize>(info.name.size()));
    detail::write_le<std::uint64_t>(out, static_cast<std::uint64_t>(info.ref.rows));
    detail::write_le<std::uint64_t>(out, static_cast<std::uint64_t>(info.ref.cols));
    const auto m = params(info.ref);
    for (Eigen::Index k = 0; k < m.size(); ++k) detail::write_le<double>(out, m.data()[k]);
  }
}

struct Checkpoint {
  NetConfig config;
  Vector frequencies;
  std::vector<double> values;

  MiniGrifdirNet instantiate(const MeshHierarchy& hierarchy) const {
    return MiniGrifdirNet(config, frequencies, values, hierarchy);
  }
};

inline Checkpoint read_checkpoint(std::istream& in) {
  detail::expect_magic(in, "GRIF1");
  const auto version = detail::read_le<std::uint32_t>(in, "version");
  require(version == kCheckpointVersion, ErrorKind::ParseError, "unsupported checkpoint version");
  Checkpoint ck;
  auto& c = ck.config;
  std::array<std::uint32_t, 7> ints{};
  for (auto& v : ints) v = detail::read_le<std::uint32_t>(in, "hyperparameters");
  require(ints[6] <= 1, ErrorKind::ParseError, "unknown mixing mode");
  c.channels = static_cast<int>(ints[0]);
  c.hidden = static_cast<int>(ints[1]);
  c.levels = static_cast<int>(ints[2]);
  c.convs_per_level = static_cast<int>(ints[3]);
  c.patch = static_cast<int>(ints[4]);
  c.time_dim = static_cast<int>(ints[5]);
  c.mixing = static_cast<MixingMode>(ints[6]);
  for (double* v : {&c.mu, &c.omega_scale, &c.sigma_min, &c.sigma_max, &c.sigma_data}) {
    *v = detail::read_le<double>(in, "hyperparameters");
  }
  try {
    c.validate();
  } catch (const Error& e) {
    throw Error(ErrorKind::ParseError, std::string("invalid checkpoint hyperparameters: ") + e.what());
  }
  ck.frequencies.resize(c.time_dim / 2);
  for (auto& w : ck.frequencies) w = detail::read_le<double>(in, "frequencies");

  // Declaration order and shapes are fixed by the hyperparameters.
  const auto layout = MiniGrifdirNet::parameter_layout(c);
  const auto tensors = detail::read_le<std::uint64_t>(in, "tensor count");
  require(tensors == layout.size(), ErrorKind::ParseError, "tensor count does not match the hyperparameters");
  for (const auto& expected : layout) {
    const auto len = detail::read_le<std::uint32_t>(in, "tensor name length");
    require(len < 4096, ErrorKind::ParseError, "implausible tensor name");
    std::string name(len, '\0');
    in.read(name.data(), len);
    require(in.gcount() == static_cast<std::streamsize>(len), ErrorKind::ParseError, "truncated tensor name");
    const auto rows = detail::read_le<std::uint64_t>(in, "tensor rows");
    const auto cols = detail::read_le<std::uint64_t>(in, "tensor cols");
    require(name == expected.name && rows == static_cast<std::uint64_t>(expected.ref.rows) &&
                cols == static_cast<std::uint64_t>(expected.ref.cols),
            ErrorKind::ParseError, "unexpected tensor '" + name + "', expected '" + expected.name + "'");
    for (std::uint64_t k = 0; k < rows * cols; ++k) ck.values.push_back(detail::read_le<double>(in, name));
  }
  return ck;
}

inline void save_checkpoint(const std::string& path, const MiniGrifdirNet& net) {
  auto out = detail::open_out(path);
  write_checkpoint(out, net);
  require(static_cast<bool>(out), ErrorKind::IOError, "write failed for '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  auto in = detail::open_in(path);
  return read_checkpoint(in);
}

// Observation file (text):
//   sensors M          followed by M lines "node_index value"
//   poisson            followed by one line with a Field file path (relative to the observation file)
struct SensorObservation {
  std::vector<int> sensors;
  Vector values;
};

struct PoissonObservation {
  std::string field_path;
};

using Observation = std::variant<SensorObservation, PoissonObservation>;

inline Observation read_observation(std::istream& in, const std::string& base_dir = ".") {
  femdiff::detail::LineReader reader(in);
  std::istringstream tok;
  std::string word;
  if (!reader.next(tok)) reader.fail("empty observation file");
  tok >> word;
  if (word == "sensors") {
    long long m = -1;
    if (!(tok >> m) || m < 0) reader.fail("expected 'sensors <count>'");
    SensorObservation obs;
    obs.values.resize(m);
    for (long long k = 0; k < m; ++k) {
      if (!reader.next(tok)) reader.fail("unexpected end of file in sensor list");
      long long idx = -1;
      double v = 0;
      if (!(tok >> idx >> v) || idx < 0 || !std::isfinite(v)) reader.fail("malformed sensor line");
      obs.sensors.push_back(static_cast<int>(idx));
      obs.values[k] = v;
    }
    if (reader.next(tok)) reader.fail("trailing content");
    return obs;
  }
  if (word == "poisson") {
    if (!reader.next(tok)) reader.fail("expected a field file path");
    std::string path;
    tok >> path;
    if (std::filesystem::path(path).is_relative()) path = (std::filesystem::path(base_dir) / path).string();
    return PoissonObservation{path};
  }
  reader.fail("expected 'sensors' or 'poisson'");
}

inline void write_observation(std::ostream& out, const SensorObservation& obs) {
  char buf[64];
  out << "sensors " << obs.sensors.size() << "\n";
  for (std::size_t k = 0; k < obs.sensors.size(); ++k) {
    std::snprintf(buf, sizeof(buf), "%.17g", obs.values[static_cast<Eigen::Index>(k)]);
    out << obs.sensors[k] << ' ' << buf << '\n';
  }
}

inline void write_observation(std::ostream& out, const PoissonObservation& obs) {
  out << "poisson\n" << obs.field_path << "\n";
}

inline Observation load_observation(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::IOError, "cannot open '" + path + "'");
  return read_observation(in, std::filesystem::path(path).parent_path().string());
}

}  // namespace femdiff::io
