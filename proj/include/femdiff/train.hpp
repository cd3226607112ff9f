#pragma once

#include "femdiff/core.hpp"
#include "femdiff/network.hpp"
#include "femdiff/nn.hpp"
#include "femdiff/randfield.hpp"
#include "femdiff/sde.hpp"

#include <cmath>
#include <string>
#include <thread>
#include <vector>

namespace femdiff {

struct TrainConfig {
  int batch_size = 8;
  int iterations = 2000;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  std::uint64_t seed = 0;
  // >1 splits each batch across threads; per-thread gradients are summed in thread order.
  int threads = 1;

  void validate() const {
    require(batch_size >= 1 && iterations >= 0 && threads >= 1, ErrorKind::InvalidArgument,
            "batch size, iterations and threads must be positive");
    require(learning_rate >= 0.0 && beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0,
            ErrorKind::InvalidArgument, "invalid optimizer settings");
  }
};

struct TrainResult {
  std::vector<double> loss;  // mean squared denoising error per iteration
};

/// One denoising example: clean field, noise level and the noisy input.
struct DenoisingExample {
  const Field* clean = nullptr;
  double sigma = 1.0;
  Matrix noisy;
};

/// Mean of ||net(a0 + sigma L z, sigma) - a0||^2 / (N C) over the examples; accumulates d loss / d params.
inline double denoising_loss_and_gradient(const MiniGrifdirNet& net, const std::vector<DenoisingExample>& batch,
                                          std::size_t begin, std::size_t end, double normalizer,
                                          std::vector<double>& grad) {
  double total = 0.0;
  MiniGrifdirNet::Trace trace;
  for (std::size_t b = begin; b < end; ++b) {
    const auto& ex = batch[b];
    const Matrix pred = net.forward(ex.noisy, ex.sigma, &trace);
    const Matrix residual = pred - ex.clean->values;
    const double count = static_cast<double>(residual.size());
    total += residual.squaredNorm() / count;
    net.backward(trace, (2.0 / (count * normalizer)) * residual, &grad);
  }
  return total;
}

/// Adam on the denoising objective with sigma drawn log-uniformly on [sigma_min, sigma_max].
inline TrainResult train_denoiser(MiniGrifdirNet& net, const std::vector<Field>& dataset,
                                  const CovarianceFactor& factor, const NoiseSchedule& schedule,
                                  const TrainConfig& config) {
  config.validate();
  require(!dataset.empty(), ErrorKind::InvalidArgument, "training set is empty");
  auto& params = net.parameters();
  nn::Adam adam(params.size(), config.learning_rate, config.beta1, config.beta2);
  Rng rng(derive_seed(config.seed, "train"));
  std::uniform_int_distribution<std::size_t> pick(0, dataset.size() - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double log_lo = std::log(schedule.sigma_min), log_hi = std::log(schedule.sigma_max);

  TrainResult result;
  result.loss.reserve(static_cast<std::size_t>(config.iterations));
  std::vector<DenoisingExample> batch(static_cast<std::size_t>(config.batch_size));
  const int workers = std::min(config.threads, config.batch_size);
  std::vector<std::vector<double>> worker_grads(static_cast<std::size_t>(workers));
  std::vector<double> worker_loss(static_cast<std::size_t>(workers));
  std::vector<double> grad(params.size());

  for (int it = 0; it < config.iterations; ++it) {
    for (auto& ex : batch) {
      ex.clean = &dataset[pick(rng)];
      ex.sigma = std::exp(log_lo + unit(rng) * (log_hi - log_lo));
      ex.noisy = ve_perturb(*ex.clean, ex.sigma, factor, rng).values;
    }
    const double normalizer = static_cast<double>(batch.size());
    auto run = [&](int w) {
      const std::size_t begin = batch.size() * static_cast<std::size_t>(w) / static_cast<std::size_t>(workers);
      const std::size_t end = batch.size() * static_cast<std::size_t>(w + 1) / static_cast<std::size_t>(workers);
      worker_grads[w].assign(params.size(), 0.0);
      worker_loss[w] = denoising_loss_and_gradient(net, batch, begin, end, normalizer, worker_grads[w]);
    };
    if (workers == 1) {
      run(0);
    } else {
      std::vector<std::thread> pool;
      for (int w = 0; w < workers; ++w) pool.emplace_back(run, w);
      for (auto& th : pool) th.join();
    }
    std::fill(grad.begin(), grad.end(), 0.0);
    double loss = 0.0;
    for (int w = 0; w < workers; ++w) {
      loss += worker_loss[w];
      for (std::size_t k = 0; k < grad.size(); ++k) grad[k] += worker_grads[w][k];
    }
    loss /= normalizer;
    if (!std::isfinite(loss)) throw Error(ErrorKind::NonFiniteLoss, "non-finite loss at iteration " + std::to_string(it));
    result.loss.push_back(loss);
    adam.step(params.values(), grad);
  }
  return result;
}

}  // namespace femdiff
