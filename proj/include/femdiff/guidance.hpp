#pragma once

#include "femdiff/core.hpp"
#include "femdiff/denoiser.hpp"
#include "femdiff/fem.hpp"
#include "femdiff/randfield.hpp"
#include "femdiff/sde.hpp"

#include <cmath>
#include <limits>
#include <memory>
#include <string>
#include <vector>

namespace femdiff {

/// Observation map L: fields -> R^m with its adjoint, plus the Gaussian observation noise level.
class ForwardOperator {
 public:
  explicit ForwardOperator(double noise_std) : noise_std_(noise_std) {
    require(noise_std > 0.0, ErrorKind::InvalidArgument, "observation noise must be positive");
  }
  virtual ~ForwardOperator() = default;

  virtual Vector apply(const Field& a) const = 0;
  /// Adjoint of the (linearized) operator at `a`, applied to w.
  virtual Field vjp(const Field& a, const Vector& w) const = 0;
  virtual Eigen::Index observation_size() const = 0;

  double noise_std() const { return noise_std_; }

 private:
  double noise_std_;
};

/// Point evaluation at a set of node indices.
class SparseSensorOperator : public ForwardOperator {
 public:
  SparseSensorOperator(std::vector<int> sensors, Eigen::Index nodes, double noise_std, GraphId graph = 0)
      : ForwardOperator(noise_std), sensors_(std::move(sensors)), nodes_(nodes), graph_(graph) {
    for (int s : sensors_) {
      require(s >= 0 && s < nodes_, ErrorKind::InvalidArgument, "sensor index " + std::to_string(s) + " out of range");
    }
  }

  Vector apply(const Field& a) const override {
    check(a);
    Vector y(static_cast<Eigen::Index>(sensors_.size()));
    for (std::size_t k = 0; k < sensors_.size(); ++k) y[static_cast<Eigen::Index>(k)] = a.values(sensors_[k], 0);
    return y;
  }

  Field vjp(const Field& a, const Vector& w) const override {
    check(a);
    require(w.size() == observation_size(), ErrorKind::ShapeMismatch, "observation vector length mismatch");
    Field g = Field::zeros(nodes_, 1, a.graph);
    for (std::size_t k = 0; k < sensors_.size(); ++k) g.values(sensors_[k], 0) += w[static_cast<Eigen::Index>(k)];
    return g;
  }

  Eigen::Index observation_size() const override { return static_cast<Eigen::Index>(sensors_.size()); }
  const std::vector<int>& sensors() const { return sensors_; }

 private:
  void check(const Field& a) const {
    require(a.nodes() == nodes_ && a.channels() == 1, ErrorKind::ShapeMismatch, "field shape mismatch");
    require_same_graph(a.graph, graph_, "field is not on the sensor graph");
  }

  std::vector<int> sensors_;
  Eigen::Index nodes_;
  GraphId graph_;
};

/// Maps a P0 source to the P1 solution of the Dirichlet Poisson problem.
class PoissonOperator : public ForwardOperator {
 public:
  PoissonOperator(PoissonSystem system, double noise_std) : ForwardOperator(noise_std), sys_(std::move(system)) {}

  Vector apply(const Field& a) const override { return poisson_solve(sys_, a).values.col(0); }

  Field vjp(const Field& a, const Vector& w) const override {
    require(a.nodes() == sys_.cell_count(), ErrorKind::ShapeMismatch, "source length mismatch");
    Field g = poisson_vjp(sys_, Field(Matrix(w), sys_.vertex_graph));
    g.graph = a.graph != 0 ? a.graph : g.graph;
    return g;
  }

  Eigen::Index observation_size() const override { return sys_.vertex_count(); }
  const PoissonSystem& system() const { return sys_; }

 private:
  PoissonSystem sys_;
};

inline std::shared_ptr<const ForwardOperator> poisson_operator(PoissonSystem system, double noise_std) {
  return std::make_shared<PoissonOperator>(std::move(system), noise_std);
}

/// Phi(a) = ||L(a) - y||^2 / (2 sigma_xi^2).
struct Potential {
  std::shared_ptr<const ForwardOperator> op;
  Vector observation;

  Potential(std::shared_ptr<const ForwardOperator> o, Vector y) : op(std::move(o)), observation(std::move(y)) {
    require(op != nullptr, ErrorKind::InvalidArgument, "potential needs a forward operator");
    require(observation.size() == op->observation_size(), ErrorKind::ShapeMismatch, "observation length mismatch");
  }

  double value(const Field& a) const {
    const double s = op->noise_std();
    return (op->apply(a) - observation).squaredNorm() / (2.0 * s * s);
  }
};

inline Field potential_grad(const Potential& pot, const Field& a) {
  const double s = pot.op->noise_std();
  return pot.op->vjp(a, (pot.op->apply(a) - pot.observation) / (s * s));
}

struct GuidanceConfig {
  double weight = 1.0;              // Fun-DPS guidance weight zeta
  bool precondition_with_C = true;  // Fun-DPS: apply C to the guidance gradient
  int daps_levels = 50;             // annealing levels N_A
  int langevin_steps = 20;          // N
  double eta0 = 1e-2;               // eta_t = eta0 * min(1, r_t^2), r_t = sigma_t

  void validate() const {
    require(weight >= 0.0, ErrorKind::InvalidArgument, "guidance weight must be non-negative");
    require(daps_levels >= 1 && langevin_steps >= 0, ErrorKind::InvalidArgument, "invalid annealing step counts");
    require(eta0 >= 0.0, ErrorKind::InvalidArgument, "step size must be non-negative");
  }
};

/// Fun-DPS guidance term for the d a / d sigma slope: zeta * sigma * C' grad_a Phi(a0_hat(a)).
inline SlopeGuidance dps_guidance(const Denoiser& denoiser, const CovarianceFactor& factor, const Potential& pot,
                                  const GuidanceConfig& config) {
  return [&denoiser, &factor, &pot, config](const Field& a, double sigma, const Field& denoised) {
    const Field g_hat = potential_grad(pot, denoised);
    Field g = denoiser.vjp(a, sigma, g_hat);
    if (config.precondition_with_C) g = apply_C(factor, g);
    g.values *= config.weight * sigma;
    return g;
  };
}

/// Heun sampling of the guided probability flow. Reduces to heun_sample when the weight is zero.
inline Field fun_dps_sample(const Denoiser& denoiser, const NoiseSchedule& schedule, const CovarianceFactor& factor,
                            const Potential& pot, const GuidanceConfig& config, Rng& rng,
                            const HeunOptions& options = {}) {
  config.validate();
  if (config.weight == 0.0) return heun_sample(denoiser, schedule, factor, rng, nullptr, options);
  const SlopeGuidance guidance = dps_guidance(denoiser, factor, pot, config);
  return heun_sample(denoiser, schedule, factor, rng, &guidance, options);
}

/// Drift of the preconditioned Langevin update: (x - x0)/r^2 + C grad Phi(x).
inline Field daps_langevin_drift(const Field& x, const Field& anchor, double r, const CovarianceFactor& factor,
                                 const Potential& pot) {
  Field drift = apply_C(factor, potential_grad(pot, x));
  drift.values += (x.values - anchor.values) / (r * r);
  return drift;
}

struct DapsSchedule {
  std::vector<double> sigmas;  // N_A + 1 levels, sigma_max first

  static DapsSchedule from(const NoiseSchedule& schedule, const GuidanceConfig& config) {
    NoiseSchedule s = schedule;
    s.n_steps = config.daps_levels + 1;
    return {ve_sigma_steps(s)};
  }
};

/// Fun-DAPS: Tweedie estimate, preconditioned Langevin on the denoised state, annealed Gaussian re-noising.
/// Never calls the denoiser's vjp.
inline Field fun_daps_sample(const Denoiser& denoiser, const NoiseSchedule& schedule, const CovarianceFactor& factor,
                             const Potential& pot, const GuidanceConfig& config, Rng& rng) {
  config.validate();
  const auto sigmas = DapsSchedule::from(schedule, config).sigmas;
  Field a = sample_grf(factor, rng);
  a.values *= sigmas.front();
  for (std::size_t i = 0; i + 1 < sigmas.size(); ++i) {
    const double sigma = sigmas[i];
    const Field anchor = denoiser.denoise(a, sigma);
    const double r = sigma;
    const double eta = config.eta0 * std::min(1.0, r * r);
    Field x = anchor;
    for (int j = 0; j < config.langevin_steps; ++j) {
      const Field drift = daps_langevin_drift(x, anchor, r, factor, pot);
      const Field noise = sample_grf(factor, rng);
      x.values += -eta * drift.values + std::sqrt(2.0 * eta) * noise.values;
      if (!x.all_finite()) {
        throw Error(ErrorKind::NonFiniteState,
                    "non-finite state at level " + std::to_string(i) + ", Langevin step " + std::to_string(j));
      }
    }
    a = ve_perturb(x, sigmas[i + 1], factor, rng);
    if (!a.all_finite()) throw Error(ErrorKind::NonFiniteState, "non-finite state at level " + std::to_string(i));
  }
  return a;
}

}  // namespace femdiff
