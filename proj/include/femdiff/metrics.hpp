#pragma once

#include "femdiff/core.hpp"

#include <cmath>
#include <vector>

namespace femdiff {

/// Posterior samples per observation, with the ground truth of each observation.
struct SampleEnsemble {
  std::vector<std::vector<Field>> samples;  // samples[i][k]
  std::vector<Field> truths;                // truths[i]

  void validate() const {
    require(!truths.empty() && samples.size() == truths.size(), ErrorKind::InvalidArgument,
            "ensemble needs one sample set per truth");
    const auto n = truths.front().nodes(), c = truths.front().channels();
    for (std::size_t i = 0; i < truths.size(); ++i) {
      require(!samples[i].empty(), ErrorKind::InvalidArgument, "observation without samples");
      require(truths[i].nodes() == n && truths[i].channels() == c, ErrorKind::ShapeMismatch, "inconsistent truths");
      for (const auto& s : samples[i]) {
        require(s.nodes() == n && s.channels() == c, ErrorKind::ShapeMismatch, "inconsistent sample shapes");
      }
    }
  }
};

namespace detail {

inline double distance(const Field& x, const Field& y) { return (x.values - y.values).norm(); }

}  // namespace detail

/// sqrt( (1/n) sum_i || a_i - mean_k a_i^(k) ||^2 ).
inline double rmse_posterior_mean(const SampleEnsemble& ens) {
  ens.validate();
  double total = 0.0;
  for (std::size_t i = 0; i < ens.truths.size(); ++i) {
    Matrix mean = Matrix::Zero(ens.truths[i].nodes(), ens.truths[i].channels());
    for (const auto& s : ens.samples[i]) mean += s.values;
    mean /= static_cast<double>(ens.samples[i].size());
    total += (ens.truths[i].values - mean).squaredNorm();
  }
  return std::sqrt(total / static_cast<double>(ens.truths.size()));
}

/// Energy score with beta = 1 for one observation; the double sum includes k = l.
inline double energy_score(const std::vector<Field>& samples, const Field& truth) {
  require(!samples.empty(), ErrorKind::InvalidArgument, "energy score needs samples");
  const double K = static_cast<double>(samples.size());
  double fit = 0.0, spread = 0.0;
  for (std::size_t k = 0; k < samples.size(); ++k) {
    fit += detail::distance(samples[k], truth);
    for (std::size_t l = k + 1; l < samples.size(); ++l) spread += 2.0 * detail::distance(samples[k], samples[l]);
  }
  return fit / K - spread / (2.0 * K * K);
}

/// Energy score averaged over observations.
inline double energy_score(const SampleEnsemble& ens) {
  ens.validate();
  double total = 0.0;
  for (std::size_t i = 0; i < ens.truths.size(); ++i) total += energy_score(ens.samples[i], ens.truths[i]);
  return total / static_cast<double>(ens.truths.size());
}

struct MmdResult {
  double mmd2 = 0.0;         // unbiased U-statistic, may be negative
  double signed_root = 0.0;  // sign(mmd2) * sqrt(|mmd2|)
};

inline double gaussian_kernel(const Field& x, const Field& z, double length_scale) {
  return std::exp(-(x.values - z.values).squaredNorm() / (2.0 * length_scale * length_scale));
}

inline MmdResult mmd_unbiased(const std::vector<Field>& xs, const std::vector<Field>& zs, double length_scale = 10.0) {
  require(xs.size() >= 2 && zs.size() >= 2, ErrorKind::InvalidArgument, "MMD needs at least two samples per set");
  require(length_scale > 0.0, ErrorKind::InvalidArgument, "kernel length scale must be positive");
  auto within = [&](const std::vector<Field>& s) {
    double sum = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i)
      for (std::size_t j = i + 1; j < s.size(); ++j) sum += 2.0 * gaussian_kernel(s[i], s[j], length_scale);
    const double n = static_cast<double>(s.size());
    return sum / (n * (n - 1.0));
  };
  double cross = 0.0;
  for (const auto& x : xs)
    for (const auto& z : zs) cross += gaussian_kernel(x, z, length_scale);
  cross *= 2.0 / (static_cast<double>(xs.size()) * static_cast<double>(zs.size()));
  MmdResult r;
  r.mmd2 = within(xs) + within(zs) - cross;
  r.signed_root = r.mmd2 >= 0.0 ? std::sqrt(r.mmd2) : -std::sqrt(-r.mmd2);
  return r;
}

}  // namespace femdiff
