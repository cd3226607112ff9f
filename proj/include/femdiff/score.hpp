#pragma once

#include "femdiff/core.hpp"
#include "femdiff/denoiser.hpp"
#include "femdiff/randfield.hpp"

#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>

namespace femdiff {

/// Exact denoiser for Gaussian data N(m, Sigma) under noise N(0, sigma^2 K):
/// E[A_0 | A_t = a] = m + Sigma (Sigma + sigma^2 K)^{-1} (a - m).
class GaussianOracleDenoiser : public Denoiser {
 public:
  GaussianOracleDenoiser(Field mean, Matrix prior_cov, Matrix noise_cov)
      : mean_(std::move(mean)), prior_cov_(std::move(prior_cov)), noise_cov_(std::move(noise_cov)) {
    const auto n = mean_.nodes();
    require(prior_cov_.rows() == n && prior_cov_.cols() == n, ErrorKind::ShapeMismatch, "prior covariance size");
    require(noise_cov_.rows() == n && noise_cov_.cols() == n, ErrorKind::ShapeMismatch, "noise covariance size");
    require((prior_cov_ - prior_cov_.transpose()).norm() <= 1e-10 * std::max(1.0, prior_cov_.norm()),
            ErrorKind::InvalidArgument, "prior covariance must be symmetric");
  }

  /// Noise operator taken from the sampler's covariance factor (L L^T, jitter included).
  GaussianOracleDenoiser(Field mean, Matrix prior_cov, const CovarianceFactor& noise)
      : GaussianOracleDenoiser(std::move(mean), std::move(prior_cov), noise.covariance()) {
    mean_.graph = noise.graph;
  }

  Field denoise(const Field& a_t, double sigma) const override {
    check(a_t, sigma);
    if (sigma == 0.0) return a_t;
    const Matrix centered = a_t.values.colwise() - mean_.values.col(0);
    Matrix out = prior_cov_ * factor(sigma)->solve(centered);
    out.colwise() += mean_.values.col(0);
    return Field(std::move(out), a_t.graph);
  }

  Field vjp(const Field& a_t, double sigma, const Field& upstream) const override {
    check(a_t, sigma);
    require(upstream.values.rows() == a_t.nodes() && upstream.channels() == a_t.channels(), ErrorKind::ShapeMismatch,
            "upstream shape mismatch");
    if (sigma == 0.0) return upstream;
    return Field(Matrix(factor(sigma)->solve(prior_cov_ * upstream.values)), a_t.graph);
  }

  const Field& mean() const { return mean_; }
  const Matrix& prior_cov() const { return prior_cov_; }
  const Matrix& noise_cov() const { return noise_cov_; }

 private:
  void check(const Field& a_t, double sigma) const {
    require(sigma >= 0.0, ErrorKind::InvalidArgument, "sigma must be non-negative");
    require(a_t.nodes() == mean_.nodes(), ErrorKind::ShapeMismatch, "field length differs from oracle size");
  }

  std::shared_ptr<const Eigen::LDLT<Matrix>> factor(double sigma) const {
    std::lock_guard<std::mutex> lock(cache_mutex_);
    if (auto it = cache_.find(sigma); it != cache_.end()) return it->second;
    const Matrix s = prior_cov_ + sigma * sigma * noise_cov_;
    auto ldlt = std::make_shared<Eigen::LDLT<Matrix>>(s);
    if (ldlt->info() != Eigen::Success || !ldlt->isPositive()) {
      const double jitter = 1e-12 * std::max(1.0, s.trace() / static_cast<double>(s.rows()));
      ldlt = std::make_shared<Eigen::LDLT<Matrix>>(s + jitter * Matrix::Identity(s.rows(), s.cols()));
      require(ldlt->info() == Eigen::Success, ErrorKind::NotPositiveDefinite, "oracle system not factorizable");
    }
    if (cache_.size() > 4096) cache_.clear();
    cache_.emplace(sigma, ldlt);
    return ldlt;
  }

  Field mean_;
  Matrix prior_cov_;
  Matrix noise_cov_;
  mutable std::mutex cache_mutex_;
  mutable std::map<double, std::shared_ptr<const Eigen::LDLT<Matrix>>> cache_;
};

/// log(sigma) mapped affinely so that [sigma_min, sigma_max] -> [0, 1].
inline double normalized_time(double sigma, double sigma_min, double sigma_max) {
  require(sigma > 0.0 && sigma_min > 0.0 && sigma_max > sigma_min, ErrorKind::InvalidArgument,
          "invalid noise level for time normalization");
  return (std::log(sigma) - std::log(sigma_min)) / (std::log(sigma_max) - std::log(sigma_min));
}

/// Random Fourier features [sin(2 pi w t); cos(2 pi w t)] for frozen frequencies w.
inline Eigen::RowVectorXd time_embedding(double t, const Vector& frequencies) {
  const auto half = frequencies.size();
  Eigen::RowVectorXd gamma(2 * half);
  for (Eigen::Index k = 0; k < half; ++k) {
    const double angle = 2.0 * std::numbers::pi * frequencies[k] * t;
    gamma[k] = std::sin(angle);
    gamma[half + k] = std::cos(angle);
  }
  return gamma;
}

/// h * (1 + alpha) + beta with alpha, beta broadcast over nodes.
inline Matrix film_modulate(const Matrix& h, const Eigen::RowVectorXd& alpha, const Eigen::RowVectorXd& beta) {
  require(alpha.size() == h.cols() && beta.size() == h.cols(), ErrorKind::ShapeMismatch,
          "FiLM parameters do not match the channel count");
  Matrix out = h.array().rowwise() * (1.0 + alpha.array());
  out.rowwise() += beta;
  return out;
}

}  // namespace femdiff
