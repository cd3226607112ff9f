#pragma once

#include "femdiff/core.hpp"

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace femdiff {

/// Sectioned key/value run configuration. Every key must appear in the schema below.
/// Precedence: schema default < config file < command-line override.
class RunConfig {
 public:
  using Table = std::map<std::string, std::map<std::string, std::string>>;

  RunConfig() : values_(defaults()) {}

  static const Table& defaults() {
    static const Table t = {
        {"run", {{"seed", "0"}, {"out", "out"}, {"threads", "1"}}},
        {"mesh", {{"nx", "8"}, {"ny", "8"}, {"shape", "square"}, {"levels", "3"}, {"file", ""}}},
        {"schedule", {{"sigma_min", "0.001"}, {"sigma_max", "40"}, {"rho", "7"}, {"steps", "400"}}},
        {"covariance", {{"length_scale", "0.1"}, {"jitter", "1e-6"}}},
        {"model",
         {{"hidden", "32"},
          {"convs_per_level", "2"},
          {"patch", "5"},
          {"mu", "2.0"},
          {"time_dim", "16"},
          {"omega_scale", "10"},
          {"mixing", "vector"}}},
        {"train", {{"batch_size", "8"}, {"iterations", "2000"}, {"lr", "1e-3"}, {"beta1", "0.9"}, {"beta2", "0.999"}}},
        {"guidance",
         {{"method", "dps"},
          {"weight", "1.0"},
          {"precondition", "true"},
          {"daps_levels", "50"},
          {"langevin_steps", "20"},
          {"eta0", "1e-2"},
          {"noise_std", "0.1"},
          {"sensors", "10"},
          {"chains", "16"}}},
        {"data",
         {{"dir", ""},
          {"count", "200"},
          {"train_fraction", "0.9"},
          {"max_inclusions", "3"},
          {"background", "1.0"},
          {"min_conductivity", "0.1"},
          {"semi_axis_min", "0.05"},
          {"semi_axis_max", "0.15"},
          {"ratio_min", "0.5"},
          {"ratio_max", "1.0"},
          {"depth_min", "0.5"},
          {"depth_max", "1.0"},
          {"containment", "2.0"}}},
        {"sample", {{"count", "16"}, {"denoiser", "oracle"}}},
        {"eval", {{"mmd_length_scale", "10.0"}}},
    };
    return t;
  }

  /// Parses `[section]` headers and `key = value` lines; '#' and ';' start comments.
  /// Unknown sections or keys are collected and reported together.
  void merge_text(const std::string& text, const std::string& origin = "config") {
    std::istringstream in(text);
    std::string line, section;
    std::vector<std::string> problems;
    int number = 0;
    while (std::getline(in, line)) {
      ++number;
      const auto cut = line.find_first_of("#;");
      if (cut != std::string::npos) line.erase(cut);
      line = trim(line);
      if (line.empty()) continue;
      const std::string where = origin + ":" + std::to_string(number);
      if (line.front() == '[') {
        if (line.back() != ']') {
          problems.push_back(where + ": malformed section header");
          continue;
        }
        section = trim(line.substr(1, line.size() - 2));
        if (!defaults().count(section)) problems.push_back(where + ": unknown section [" + section + "]");
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        problems.push_back(where + ": expected key = value");
        continue;
      }
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      if (section.empty()) {
        problems.push_back(where + ": key '" + key + "' outside any section");
      } else if (!known(section, key)) {
        if (defaults().count(section)) problems.push_back(where + ": unknown key '" + section + "." + key + "'");
      } else {
        values_[section][key] = value;
      }
    }
    report(problems);
  }

  void merge_file(const std::string& path) {
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorKind::IOError, "cannot open config '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    merge_text(ss.str(), path);
  }

  /// Applies `section.key=value` overrides.
  void apply_overrides(const std::vector<std::string>& overrides) {
    std::vector<std::string> problems;
    for (const auto& o : overrides) {
      const auto eq = o.find('=');
      const auto dot = o.find('.');
      if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
        problems.push_back("override '" + o + "': expected section.key=value");
        continue;
      }
      const std::string section = trim(o.substr(0, dot));
      const std::string key = trim(o.substr(dot + 1, eq - dot - 1));
      if (!known(section, key)) {
        problems.push_back("override '" + o + "': unknown key '" + section + "." + key + "'");
        continue;
      }
      values_[section][key] = trim(o.substr(eq + 1));
    }
    report(problems);
  }

  void set(const std::string& section, const std::string& key, const std::string& value) {
    require(known(section, key), ErrorKind::ConfigError, "unknown key '" + section + "." + key + "'");
    values_[section][key] = value;
  }

  const std::string& str(const std::string& section, const std::string& key) const {
    require(known(section, key), ErrorKind::ConfigError, "unknown key '" + section + "." + key + "'");
    return values_.at(section).at(key);
  }

  double real(const std::string& section, const std::string& key) const {
    const auto& s = str(section, key);
    try {
      std::size_t used = 0;
      const double v = std::stod(s, &used);
      if (used == s.size()) return v;
    } catch (const std::exception&) {
    }
    throw Error(ErrorKind::ConfigError, section + "." + key + ": expected a number, got '" + s + "'");
  }

  long long integer(const std::string& section, const std::string& key) const {
    const auto& s = str(section, key);
    try {
      std::size_t used = 0;
      const long long v = std::stoll(s, &used);
      if (used == s.size()) return v;
    } catch (const std::exception&) {
    }
    throw Error(ErrorKind::ConfigError, section + "." + key + ": expected an integer, got '" + s + "'");
  }

  std::uint64_t u64(const std::string& section, const std::string& key) const {
    const auto& s = str(section, key);
    try {
      std::size_t used = 0;
      if (!s.empty() && s.front() != '-') {
        const unsigned long long v = std::stoull(s, &used, 0);
        if (used == s.size()) return v;
      }
    } catch (const std::exception&) {
    }
    throw Error(ErrorKind::ConfigError, section + "." + key + ": expected an unsigned integer, got '" + s + "'");
  }

  bool boolean(const std::string& section, const std::string& key) const {
    const auto& s = str(section, key);
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    throw Error(ErrorKind::ConfigError, section + "." + key + ": expected a boolean, got '" + s + "'");
  }

  const Table& table() const { return values_; }

  /// Canonical text form; parsing it back yields the same table.
  std::string dump() const {
    std::ostringstream out;
    for (const auto& [section, kv] : values_) {
      out << "[" << section << "]\n";
      for (const auto& [k, v] : kv) out << k << " = " << v << "\n";
    }
    return out.str();
  }

 private:
  static bool known(const std::string& section, const std::string& key) {
    const auto it = defaults().find(section);
    return it != defaults().end() && it->second.count(key) > 0;
  }

  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  static void report(const std::vector<std::string>& problems) {
    if (problems.empty()) return;
    std::string msg = "invalid configuration:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw Error(ErrorKind::ConfigError, msg);
  }

  Table values_;
};

}  // namespace femdiff
