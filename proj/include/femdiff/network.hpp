#pragma once

#include "femdiff/core.hpp"
#include "femdiff/denoiser.hpp"
#include "femdiff/fem.hpp"
#include "femdiff/mesh.hpp"
#include "femdiff/nn.hpp"
#include "femdiff/score.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace femdiff {

// ---------------------------------------------------------------------------
// Grid transfer between hierarchy levels.

/// Mean of each coarse node's pre-image.
inline Matrix pool_mean(const Matrix& fine, const std::vector<std::vector<int>>& preimages) {
  Matrix coarse = Matrix::Zero(static_cast<Eigen::Index>(preimages.size()), fine.cols());
  for (std::size_t c = 0; c < preimages.size(); ++c) {
    require(!preimages[c].empty(), ErrorKind::InvalidHierarchy, "coarse node with empty pre-image");
    for (int i : preimages[c]) coarse.row(static_cast<Eigen::Index>(c)) += fine.row(i);
    coarse.row(static_cast<Eigen::Index>(c)) /= static_cast<double>(preimages[c].size());
  }
  return coarse;
}

inline Matrix pool_mean_backward(const Matrix& grad_coarse, const std::vector<std::vector<int>>& preimages,
                                 Eigen::Index fine_nodes) {
  Matrix grad = Matrix::Zero(fine_nodes, grad_coarse.cols());
  for (std::size_t c = 0; c < preimages.size(); ++c) {
    const double w = 1.0 / static_cast<double>(preimages[c].size());
    for (int i : preimages[c]) grad.row(i) += w * grad_coarse.row(static_cast<Eigen::Index>(c));
  }
  return grad;
}

/// Copies each coarse row to the fine nodes it owns.
inline Matrix broadcast(const Matrix& coarse, const std::vector<int>& pool_map) {
  Matrix fine(static_cast<Eigen::Index>(pool_map.size()), coarse.cols());
  for (std::size_t i = 0; i < pool_map.size(); ++i) fine.row(static_cast<Eigen::Index>(i)) = coarse.row(pool_map[i]);
  return fine;
}

inline Matrix broadcast_backward(const Matrix& grad_fine, const std::vector<int>& pool_map, Eigen::Index coarse_nodes) {
  Matrix grad = Matrix::Zero(coarse_nodes, grad_fine.cols());
  for (std::size_t i = 0; i < pool_map.size(); ++i) grad.row(pool_map[i]) += grad_fine.row(static_cast<Eigen::Index>(i));
  return grad;
}

/// Restriction h_c = m_c + out(silu(hidden(m_c))), m_c the pre-image mean.
struct Restriction {
  nn::Dense hidden;
  nn::Dense out;

  struct Trace {
    Matrix mean;
    Matrix hidden_pre;
  };

  static Restriction create(nn::ParameterSet& p, const std::string& name, Eigen::Index width) {
    return {nn::Dense::create(p, name + ".hidden", width, width), nn::Dense::create(p, name + ".out", width, width)};
  }

  Matrix forward(const nn::ParameterSet& p, const Matrix& fine, const std::vector<std::vector<int>>& preimages,
                 Trace* trace = nullptr) const {
    Matrix mean = pool_mean(fine, preimages);
    Matrix pre = hidden.forward(p, mean);
    Matrix result = mean + out.forward(p, nn::silu(pre));
    if (trace != nullptr) *trace = {std::move(mean), std::move(pre)};
    return result;
  }

  Matrix backward(const nn::ParameterSet& p, const Trace& t, const Matrix& upstream,
                  const std::vector<std::vector<int>>& preimages, Eigen::Index fine_nodes,
                  std::vector<double>* grad) const {
    const Matrix g_act = out.backward(p, nn::silu(t.hidden_pre), upstream, grad);
    const Matrix g_mean = upstream + hidden.backward(p, t.mean, nn::silu_backward(t.hidden_pre, g_act), grad);
    return pool_mean_backward(g_mean, preimages, fine_nodes);
  }
};

/// Prolongation h_i = b_i + out(silu(hidden([b_i; skip_i]))), b the broadcast coarse feature.
struct Prolongation {
  nn::Dense hidden;
  nn::Dense out;

  struct Trace {
    Matrix concat;
    Matrix hidden_pre;
  };

  static Prolongation create(nn::ParameterSet& p, const std::string& name, Eigen::Index width) {
    return {nn::Dense::create(p, name + ".hidden", 2 * width, width),
            nn::Dense::create(p, name + ".out", width, width)};
  }

  Matrix forward(const nn::ParameterSet& p, const Matrix& coarse, const Matrix& skip, const std::vector<int>& pool_map,
                 Trace* trace = nullptr) const {
    require(skip.rows() == static_cast<Eigen::Index>(pool_map.size()) && skip.cols() == coarse.cols(),
            ErrorKind::ShapeMismatch, "skip connection shape mismatch");
    const Matrix b = broadcast(coarse, pool_map);
    Matrix concat(b.rows(), 2 * b.cols());
    concat << b, skip;
    Matrix pre = hidden.forward(p, concat);
    Matrix result = b + out.forward(p, nn::silu(pre));
    if (trace != nullptr) *trace = {std::move(concat), std::move(pre)};
    return result;
  }

  /// Returns the coarse-input gradient; writes the skip gradient.
  Matrix backward(const nn::ParameterSet& p, const Trace& t, const Matrix& upstream, const std::vector<int>& pool_map,
                  Eigen::Index coarse_nodes, Matrix& grad_skip, std::vector<double>* grad) const {
    const Matrix g_act = out.backward(p, nn::silu(t.hidden_pre), upstream, grad);
    const Matrix g_concat = hidden.backward(p, t.concat, nn::silu_backward(t.hidden_pre, g_act), grad);
    const Eigen::Index width = upstream.cols();
    grad_skip = g_concat.rightCols(width);
    const Matrix g_b = upstream + g_concat.leftCols(width);
    return broadcast_backward(g_b, pool_map, coarse_nodes);
  }
};

// ---------------------------------------------------------------------------

enum class MixingMode { Dense, Vector };

inline const char* to_string(MixingMode m) { return m == MixingMode::Dense ? "dense" : "vector"; }

inline MixingMode mixing_mode_from_string(const std::string& s) {
  if (s == "dense") return MixingMode::Dense;
  if (s == "vector") return MixingMode::Vector;
  throw Error(ErrorKind::InvalidArgument, "unknown mixing mode '" + s + "'");
}

/// Architecture hyperparameters. Defaults are sized for a single core.
struct NetConfig {
  int channels = 1;
  int hidden = 32;
  int levels = 3;
  int convs_per_level = 2;
  int patch = 5;
  double mu = 2.0;
  int time_dim = 16;
  double omega_scale = 10.0;
  MixingMode mixing = MixingMode::Vector;
  double sigma_min = 0.001;
  double sigma_max = 40.0;
  double sigma_data = 1.0;  // input scaling a_t / sqrt(sigma_data^2 + sigma^2)

  void validate() const {
    require(channels >= 1 && hidden >= 1 && levels >= 1 && convs_per_level >= 0, ErrorKind::InvalidArgument,
            "network sizes must be positive");
    require(patch >= 2, ErrorKind::InvalidArgument, "patch resolution must be at least 2");
    require(time_dim >= 2 && time_dim % 2 == 0, ErrorKind::InvalidArgument, "time embedding dimension must be even");
    require(mu > 0.0 && omega_scale >= 0.0 && sigma_data > 0.0, ErrorKind::InvalidArgument,
            "mu, omega scale and sigma_data must be positive");
    require(sigma_min > 0.0 && sigma_max > sigma_min, ErrorKind::InvalidArgument, "need 0 < sigma_min < sigma_max");
  }
};

/// Reduced multiscale FEM-convolution denoiser: encoder, down pass of FEM convolutions with FiLM and
/// position re-injection, learned restriction to the coarsest level, prolongation with skips, decoder.
class MiniGrifdirNet : public Denoiser {
 public:
  struct ConvLayer {
    nn::ParamRef weight;  // dense mode: (H P^2) x H
    nn::ParamRef gate;    // vector mode: H x P^2
    nn::ParamRef mix;     // vector mode: H x H
    nn::ParamRef bias;    // 1 x H
    nn::Dense film;       // d_t -> 2H, zero-initialized
  };

  struct ConvTrace {
    Matrix input;
    Matrix weight_matrix;
    Matrix conv;  // before FiLM
    Eigen::RowVectorXd alpha, beta;
    Matrix pre_activation;
  };

  struct Trace {
    double input_scale = 1.0;
    Eigen::RowVectorXd gamma;
    Matrix enc_input;
    Matrix enc_hidden_pre;
    std::vector<std::vector<ConvTrace>> convs;
    std::vector<Restriction::Trace> restricts;
    std::vector<Prolongation::Trace> prolongs;
    Matrix dec_input;
    Matrix dec_hidden_pre;
  };

  MiniGrifdirNet(const NetConfig& config, const MeshHierarchy& hierarchy, std::uint64_t seed) : cfg_(config) {
    cfg_.validate();
    declare();
    Rng rng(derive_seed(seed, "net.init"));
    std::normal_distribution<double> normal(0.0, cfg_.omega_scale);
    omega_.resize(cfg_.time_dim / 2);
    for (auto& w : omega_) w = normal(rng);
    initialize(rng);
    bind(hierarchy);
  }

  /// Rebuilds a network from stored frequencies and parameter values.
  MiniGrifdirNet(const NetConfig& config, const Vector& frequencies, const std::vector<double>& values,
                 const MeshHierarchy& hierarchy)
      : cfg_(config) {
    cfg_.validate();
    declare();
    require(frequencies.size() == cfg_.time_dim / 2, ErrorKind::ShapeMismatch, "frequency vector size");
    require(values.size() == params_.size(), ErrorKind::ShapeMismatch, "parameter count mismatch");
    omega_ = frequencies;
    params_.values() = values;
    bind(hierarchy);
  }

  /// Names and shapes of all parameter tensors in declaration order.
  static std::vector<nn::ParamInfo> parameter_layout(const NetConfig& config) {
    MiniGrifdirNet net(config, LayoutOnly{});
    return net.params_.infos();
  }

  /// Attaches the network to a mesh hierarchy; parameters are geometry-independent.
  void bind(const MeshHierarchy& hierarchy) {
    require(static_cast<int>(hierarchy.level_count()) == cfg_.levels, ErrorKind::InvalidHierarchy,
            "hierarchy depth differs from the network's level count");
    require(std::abs(hierarchy.mu - cfg_.mu) <= 1e-12 * cfg_.mu, ErrorKind::RadiusMismatch,
            "hierarchy radius multiplier differs from the network's mu");
    positions_.clear();
    stencils_.clear();
    for (int l = 0; l < cfg_.levels; ++l) {
      const auto& g = hierarchy.levels[l];
      positions_.push_back(g.positions_matrix());
      stencils_.push_back(build_conv_stencil(build_neighbor_table(g, hierarchy.radii[l]), cfg_.patch));
    }
    pool_maps_ = hierarchy.pool_maps;
    preimages_ = hierarchy.preimages;
    graph_ = hierarchy.levels.front().id;
  }

  Matrix forward(const Matrix& a_t, double sigma, Trace* trace = nullptr) const {
    require(a_t.rows() == positions_.front().rows() && a_t.cols() == cfg_.channels, ErrorKind::ShapeMismatch,
            "input field shape does not match the bound hierarchy");
    require(sigma > 0.0, ErrorKind::InvalidArgument, "network needs sigma > 0");
    Trace local;
    Trace& t = trace != nullptr ? *trace : local;
    const auto& p = params_;
    const Eigen::Index n0 = a_t.rows();

    t.input_scale = 1.0 / std::sqrt(cfg_.sigma_data * cfg_.sigma_data + sigma * sigma);
    t.gamma = time_embedding(normalized_time(sigma, cfg_.sigma_min, cfg_.sigma_max), omega_);
    t.enc_input.resize(n0, cfg_.channels + 2 + cfg_.time_dim);
    t.enc_input << t.input_scale * a_t, positions_.front(), t.gamma.replicate(n0, 1);
    t.enc_hidden_pre = enc1_.forward(p, t.enc_input);
    Matrix h = enc2_.forward(p, nn::silu(t.enc_hidden_pre));

    t.convs.assign(cfg_.levels, {});
    t.restricts.assign(cfg_.levels - 1, {});
    t.prolongs.assign(cfg_.levels - 1, {});
    std::vector<Matrix> skips(cfg_.levels - 1);
    for (int l = 0; l < cfg_.levels; ++l) {
      h += pos_[l].forward(p, positions_[l]);
      for (int k = 0; k < cfg_.convs_per_level; ++k) {
        const ConvLayer& layer = convs_[l][k];
        ConvTrace ct;
        ct.input = h;
        ct.weight_matrix = weight_matrix(layer);
        ct.conv = conv_apply(stencils_[l], h, ct.weight_matrix);
        ct.conv.rowwise() += p(layer.bias).row(0);
        const Eigen::RowVectorXd film = layer.film.forward(p, t.gamma);
        ct.alpha = film.head(cfg_.hidden);
        ct.beta = film.tail(cfg_.hidden);
        ct.pre_activation = film_modulate(ct.conv, ct.alpha, ct.beta);
        h += nn::silu(ct.pre_activation);
        t.convs[l].push_back(std::move(ct));
      }
      if (l + 1 < cfg_.levels) {
        skips[l] = h;
        h = restrict_[l].forward(p, h, preimages_[l], &t.restricts[l]);
      }
    }
    for (int l = cfg_.levels - 2; l >= 0; --l) {
      h = prolong_[l].forward(p, h, skips[l], pool_maps_[l], &t.prolongs[l]);
    }
    t.dec_input = h;
    t.dec_hidden_pre = dec1_.forward(p, h);
    return dec2_.forward(p, nn::silu(t.dec_hidden_pre));
  }

  /// Reverse pass: accumulates parameter gradients into `grad` (if non-null), returns d/d a_t.
  Matrix backward(const Trace& t, const Matrix& upstream, std::vector<double>* grad) const {
    const auto& p = params_;
    if (grad != nullptr && grad->size() != params_.size()) grad->assign(params_.size(), 0.0);
    Matrix g = dec2_.backward(p, nn::silu(t.dec_hidden_pre), upstream, grad);
    g = dec1_.backward(p, t.dec_input, nn::silu_backward(t.dec_hidden_pre, g), grad);

    std::vector<Matrix> grad_skips(cfg_.levels - 1);
    for (int l = 0; l + 1 < cfg_.levels; ++l) {
      g = prolong_[l].backward(p, t.prolongs[l], g, pool_maps_[l], positions_[l + 1].rows(), grad_skips[l], grad);
    }
    for (int l = cfg_.levels - 1; l >= 0; --l) {
      if (l + 1 < cfg_.levels) {
        g = restrict_[l].backward(p, t.restricts[l], g, preimages_[l], positions_[l].rows(), grad) + grad_skips[l];
      }
      for (int k = cfg_.convs_per_level - 1; k >= 0; --k) {
        const ConvLayer& layer = convs_[l][k];
        const ConvTrace& ct = t.convs[l][k];
        const Matrix g_pre = nn::silu_backward(ct.pre_activation, g);
        const Matrix g_conv = g_pre.array().rowwise() * (1.0 + ct.alpha.array());
        if (grad != nullptr) {
          Eigen::RowVectorXd g_film(2 * cfg_.hidden);
          g_film << (g_pre.array() * ct.conv.array()).colwise().sum(), g_pre.colwise().sum();
          layer.film.backward(p, t.gamma, g_film, grad);
          nn::view(*grad, layer.bias) += g_conv.colwise().sum();
        }
        Matrix g_weight;
        g += conv_backward(stencils_[l], ct.input, ct.weight_matrix, g_conv, g_weight);
        if (grad != nullptr) accumulate_weight_gradient(layer, g_weight, *grad);
      }
      if (grad != nullptr) pos_[l].backward(p, positions_[l], g, grad);
    }
    g = enc2_.backward(p, nn::silu(t.enc_hidden_pre), g, grad);
    const Matrix g_input = enc1_.backward(p, t.enc_input, nn::silu_backward(t.enc_hidden_pre, g), grad);
    return t.input_scale * g_input.leftCols(cfg_.channels);
  }

  Field denoise(const Field& a_t, double sigma) const override {
    require_same_graph(a_t.graph, graph_, "field is not on the network's finest level");
    return Field(forward(a_t.values, sigma), a_t.graph);
  }

  Field vjp(const Field& a_t, double sigma, const Field& upstream) const override {
    require_same_graph(a_t.graph, graph_, "field is not on the network's finest level");
    Trace t;
    forward(a_t.values, sigma, &t);
    return Field(backward(t, upstream.values, nullptr), a_t.graph);
  }

  /// Every parameter redrawn from N(0, scale^2); used for gradient checks.
  void randomize(Rng& rng, double scale) {
    std::normal_distribution<double> normal(0.0, scale);
    for (auto& v : params_.values()) v = normal(rng);
  }

  const NetConfig& config() const { return cfg_; }
  const Vector& frequencies() const { return omega_; }
  nn::ParameterSet& parameters() { return params_; }
  const nn::ParameterSet& parameters() const { return params_; }
  std::size_t parameter_count() const { return params_.size(); }
  GraphId graph() const { return graph_; }
  Eigen::Index nodes() const { return positions_.front().rows(); }

 private:
  struct LayoutOnly {};

  MiniGrifdirNet(const NetConfig& config, LayoutOnly) : cfg_(config) {
    cfg_.validate();
    declare();
  }

  void declare() {
    const int H = cfg_.hidden, P2 = cfg_.patch * cfg_.patch;
    enc1_ = nn::Dense::create(params_, "encoder.0", cfg_.channels + 2 + cfg_.time_dim, H);
    enc2_ = nn::Dense::create(params_, "encoder.1", H, H);
    for (int l = 0; l < cfg_.levels; ++l) {
      const std::string lv = "level" + std::to_string(l);
      pos_.push_back(nn::Dense::create(params_, lv + ".position", 2, H));
      convs_.emplace_back();
      for (int k = 0; k < cfg_.convs_per_level; ++k) {
        const std::string nm = lv + ".conv" + std::to_string(k);
        ConvLayer layer;
        if (cfg_.mixing == MixingMode::Dense) {
          layer.weight = params_.add(nm + ".weight", static_cast<Eigen::Index>(H) * P2, H);
        } else {
          layer.gate = params_.add(nm + ".gate", H, P2);
          layer.mix = params_.add(nm + ".mix", H, H);
        }
        layer.bias = params_.add(nm + ".bias", 1, H);
        layer.film = nn::Dense::create(params_, nm + ".film", cfg_.time_dim, 2 * H);
        convs_.back().push_back(layer);
      }
    }
    for (int l = 0; l + 1 < cfg_.levels; ++l) {
      restrict_.push_back(Restriction::create(params_, "restrict" + std::to_string(l), H));
    }
    for (int l = 0; l + 1 < cfg_.levels; ++l) {
      prolong_.push_back(Prolongation::create(params_, "prolong" + std::to_string(l), H));
    }
    dec1_ = nn::Dense::create(params_, "decoder.0", H, H);
    dec2_ = nn::Dense::create(params_, "decoder.1", H, cfg_.channels);
  }

  // Scaled normal weights, zero biases; FiLM, residual branch outputs and the final decoder layer start at zero.
  void initialize(Rng& rng) {
    auto fill = [&](const nn::ParamRef& r, double stddev) {
      std::normal_distribution<double> normal(0.0, stddev);
      auto m = params_(r);
      for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = normal(rng);
    };
    auto dense = [&](const nn::Dense& d) { fill(d.weight, 1.0 / std::sqrt(static_cast<double>(d.in()))); };
    const double H = cfg_.hidden;
    dense(enc1_);
    dense(enc2_);
    for (int l = 0; l < cfg_.levels; ++l) {
      dense(pos_[l]);
      for (const auto& layer : convs_[l]) {
        if (cfg_.mixing == MixingMode::Dense) {
          fill(layer.weight, cfg_.patch / std::sqrt(H));
        } else {
          fill(layer.gate, 1.0);
          fill(layer.mix, 1.0 / std::sqrt(H));
        }
      }
    }
    for (const auto& r : restrict_) dense(r.hidden);
    for (const auto& pr : prolong_) dense(pr.hidden);
    dense(dec1_);
  }

  Matrix weight_matrix(const ConvLayer& layer) const {
    if (cfg_.mixing == MixingMode::Dense) return params_(layer.weight);
    return VectorGateFilter{params_(layer.gate), params_(layer.mix), 1.0}.as_matrix();
  }

  void accumulate_weight_gradient(const ConvLayer& layer, const Matrix& g_weight, std::vector<double>& grad) const {
    if (cfg_.mixing == MixingMode::Dense) {
      nn::view(grad, layer.weight) += g_weight;
      return;
    }
    Matrix g_gate, g_mix;
    VectorGateFilter{params_(layer.gate), params_(layer.mix), 1.0}.split_gradient(g_weight, g_gate, g_mix);
    nn::view(grad, layer.gate) += g_gate;
    nn::view(grad, layer.mix) += g_mix;
  }

  NetConfig cfg_;
  nn::ParameterSet params_;
  Vector omega_;
  nn::Dense enc1_, enc2_, dec1_, dec2_;
  std::vector<nn::Dense> pos_;
  std::vector<std::vector<ConvLayer>> convs_;
  std::vector<Restriction> restrict_;
  std::vector<Prolongation> prolong_;

  std::vector<Matrix> positions_;
  std::vector<ConvStencil> stencils_;
  std::vector<std::vector<int>> pool_maps_;
  std::vector<std::vector<std::vector<int>>> preimages_;
  GraphId graph_ = 0;
};

}  // namespace femdiff
