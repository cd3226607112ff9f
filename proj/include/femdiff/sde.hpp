#pragma once

#include "femdiff/core.hpp"
#include "femdiff/denoiser.hpp"
#include "femdiff/randfield.hpp"

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace femdiff {

enum class SdeKind { VE, VP };

struct NoiseSchedule {
  SdeKind kind = SdeKind::VE;
  double sigma_min = 0.001;
  double sigma_max = 40.0;
  int n_steps = 400;
  double rho = 7.0;
  double t_min = 1e-3;  // VP only
  double t_max = 10.0;  // VP only

  void validate() const {
    require(n_steps >= 2, ErrorKind::InvalidArgument, "schedule needs at least two steps");
    if (kind == SdeKind::VE) {
      require(sigma_min > 0.0 && sigma_min < sigma_max, ErrorKind::InvalidArgument, "need 0 < sigma_min < sigma_max");
      require(rho > 0.0, ErrorKind::InvalidArgument, "rho must be positive");
    } else {
      require(t_min >= 0.0 && t_min < t_max, ErrorKind::InvalidArgument, "need 0 <= t_min < t_max");
    }
  }
};

/// sigma_i = (smax^(1/rho) + i/(N-1) (smin^(1/rho) - smax^(1/rho)))^rho, i = 0..N-1.
inline std::vector<double> ve_sigma_steps(const NoiseSchedule& s) {
  s.validate();
  const double hi = std::pow(s.sigma_max, 1.0 / s.rho);
  const double lo = std::pow(s.sigma_min, 1.0 / s.rho);
  std::vector<double> sigmas(static_cast<std::size_t>(s.n_steps));
  for (int i = 0; i < s.n_steps; ++i) {
    sigmas[i] = std::pow(hi + (static_cast<double>(i) / (s.n_steps - 1)) * (lo - hi), s.rho);
  }
  sigmas.front() = s.sigma_max;
  sigmas.back() = s.sigma_min;
  return sigmas;
}

/// a0 + sigma * L z, a draw from N(a0, sigma^2 C).
inline Field ve_perturb(const Field& a0, double sigma, const CovarianceFactor& factor, Rng& rng) {
  require(sigma >= 0.0, ErrorKind::InvalidArgument, "sigma must be non-negative");
  require(a0.nodes() == factor.size(), ErrorKind::ShapeMismatch, "field length differs from covariance size");
  Field out = a0;
  for (Eigen::Index c = 0; c < a0.channels(); ++c) {
    const Vector z = standard_normal(factor.size(), rng);
    const Vector lz = factor.chol.triangularView<Eigen::Lower>() * z;
    out.values.col(c) += sigma * lz;
  }
  return out;
}

/// e^{-t/2} a0 + sqrt(1 - e^{-t}) L z.
inline Field vp_perturb(const Field& a0, double t, const CovarianceFactor& factor, Rng& rng) {
  require(t >= 0.0, ErrorKind::InvalidArgument, "t must be non-negative");
  require(a0.nodes() == factor.size(), ErrorKind::ShapeMismatch, "field length differs from covariance size");
  const double mean_scale = std::exp(-0.5 * t);
  const double noise_scale = std::sqrt(-std::expm1(-t));
  Field out(mean_scale * a0.values, a0.graph);
  for (Eigen::Index c = 0; c < a0.channels(); ++c) {
    const Vector z = standard_normal(factor.size(), rng);
    const Vector lz = factor.chol.triangularView<Eigen::Lower>() * z;
    out.values.col(c) += noise_scale * lz;
  }
  return out;
}

/// C-absorbed score -(a - a0_hat) / sigma^2.
inline Field score_from_denoiser(const Field& a, double sigma, const Field& a0_hat) {
  require(sigma > 0.0, ErrorKind::InvalidArgument, "score undefined at sigma = 0");
  require(a.values.rows() == a0_hat.values.rows() && a.values.cols() == a0_hat.values.cols(), ErrorKind::ShapeMismatch,
          "field shapes differ");
  return Field(-(a.values - a0_hat.values) / (sigma * sigma), a.graph);
}

/// Extra term added to the d a / d sigma slope; receives the state, sigma and the denoiser output.
using SlopeGuidance = std::function<Field(const Field& a, double sigma, const Field& denoised)>;

struct HeunOptions {
  double churn = 0.0;          // stochastic churn S_churn; 0 gives the deterministic probability flow
  bool final_denoise = false;  // return denoise(a, sigma_min) instead of the final state
};

namespace detail {

inline void check_finite(const Field& a, std::size_t step) {
  if (!a.all_finite()) throw Error(ErrorKind::NonFiniteState, "non-finite state at step " + std::to_string(step));
}

}  // namespace detail

/// Karras-Heun integration of the probability-flow ODE from an explicit initial state at sigma_max.
inline Field heun_integrate(const Denoiser& denoiser, const std::vector<double>& sigmas, Field a,
                            const CovarianceFactor& factor, Rng& rng, const SlopeGuidance* guidance = nullptr,
                            const HeunOptions& options = {}) {
  require(sigmas.size() >= 2, ErrorKind::InvalidArgument, "need at least two noise levels");
  const std::size_t steps = sigmas.size() - 1;
  const double gamma = options.churn > 0.0 ? std::min(options.churn / static_cast<double>(steps), std::sqrt(2.0) - 1.0) : 0.0;

  auto slope = [&](const Field& state, double sigma) {
    Field denoised = denoiser.denoise(state, sigma);
    Field d((state.values - denoised.values) / sigma, state.graph);
    if (guidance != nullptr && *guidance) d.values += (*guidance)(state, sigma, denoised).values;
    return d;
  };

  for (std::size_t i = 0; i < steps; ++i) {
    double sigma = sigmas[i];
    const double sigma_next = sigmas[i + 1];
    if (gamma > 0.0) {
      const double sigma_hat = sigma * (1.0 + gamma);
      a = ve_perturb(a, std::sqrt(sigma_hat * sigma_hat - sigma * sigma), factor, rng);
      sigma = sigma_hat;
    }
    const Field d = slope(a, sigma);
    const double h = sigma_next - sigma;
    Field euler(a.values + h * d.values, a.graph);
    if (i + 1 < steps) {
      const Field d_next = slope(euler, sigma_next);
      a.values += 0.5 * h * (d.values + d_next.values);
    } else {
      a = std::move(euler);
    }
    detail::check_finite(a, i);
  }
  if (options.final_denoise) {
    a = denoiser.denoise(a, sigmas.back());
    detail::check_finite(a, steps);
  }
  return a;
}

/// Draws a0 ~ sigma_max N(0, C) and integrates down to sigma_min.
inline Field heun_sample(const Denoiser& denoiser, const NoiseSchedule& schedule, const CovarianceFactor& factor,
                         Rng& rng, const SlopeGuidance* guidance = nullptr, const HeunOptions& options = {}) {
  const auto sigmas = ve_sigma_steps(schedule);
  Field init = sample_grf(factor, rng);
  init.values *= schedule.sigma_max;
  return heun_integrate(denoiser, sigmas, std::move(init), factor, rng, guidance, options);
}

}  // namespace femdiff
