#pragma once

#include "femdiff/core.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace femdiff::nn {

/// Location of one tensor inside a flat parameter vector (column-major rows x cols).
struct ParamRef {
  std::size_t offset = 0;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;

  Eigen::Index size() const { return rows * cols; }
};

struct ParamInfo {
  std::string name;
  ParamRef ref;
};

/// All trainable tensors of a model, stored contiguously in declaration order.
class ParameterSet {
 public:
  ParamRef add(std::string name, Eigen::Index rows, Eigen::Index cols) {
    ParamRef ref{values_.size(), rows, cols};
    values_.resize(values_.size() + static_cast<std::size_t>(rows * cols), 0.0);
    infos_.push_back({std::move(name), ref});
    return ref;
  }

  Eigen::Map<Matrix> operator()(const ParamRef& r) { return {values_.data() + r.offset, r.rows, r.cols}; }
  Eigen::Map<const Matrix> operator()(const ParamRef& r) const { return {values_.data() + r.offset, r.rows, r.cols}; }

  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }
  const std::vector<ParamInfo>& infos() const { return infos_; }
  std::size_t size() const { return values_.size(); }

 private:
  std::vector<double> values_;
  std::vector<ParamInfo> infos_;
};

inline Eigen::Map<Matrix> view(std::vector<double>& buffer, const ParamRef& r) {
  return {buffer.data() + r.offset, r.rows, r.cols};
}

inline Matrix silu(const Matrix& x) {
  return x.array() / (1.0 + (-x.array()).exp());
}

/// d silu / dx evaluated at the pre-activation x, times upstream.
inline Matrix silu_backward(const Matrix& x, const Matrix& upstream) {
  const Eigen::ArrayXXd sig = 1.0 / (1.0 + (-x.array()).exp());
  return (upstream.array() * sig * (1.0 + x.array() * (1.0 - sig))).matrix();
}

/// Affine map y = x W + b applied row-wise.
struct Dense {
  ParamRef weight;  // in x out
  ParamRef bias;    // 1 x out

  static Dense create(ParameterSet& params, const std::string& name, Eigen::Index in, Eigen::Index out) {
    return {params.add(name + ".weight", in, out), params.add(name + ".bias", 1, out)};
  }

  Eigen::Index in() const { return weight.rows; }
  Eigen::Index out() const { return weight.cols; }

  Matrix forward(const ParameterSet& p, const Matrix& x) const {
    Matrix y = x * p(weight);
    y.rowwise() += p(bias).row(0);
    return y;
  }

  /// Accumulates parameter gradients (if `grad` is non-null) and returns the input gradient.
  Matrix backward(const ParameterSet& p, const Matrix& x, const Matrix& upstream, std::vector<double>* grad) const {
    if (grad != nullptr) {
      view(*grad, weight).noalias() += x.transpose() * upstream;
      view(*grad, bias) += upstream.colwise().sum();
    }
    return upstream * p(weight).transpose();
  }
};

/// Adam with bias correction over a flat parameter vector.
class Adam {
 public:
  Adam(std::size_t size, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), m_(size, 0.0), v_(size, 0.0) {}

  void step(std::vector<double>& params, const std::vector<double>& grad) {
    require(params.size() == m_.size() && grad.size() == m_.size(), ErrorKind::ShapeMismatch,
            "optimizer state size mismatch");
    ++t_;
    if (lr_ == 0.0) return;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      m_[k] = beta1_ * m_[k] + (1.0 - beta1_) * grad[k];
      v_[k] = beta2_ * v_[k] + (1.0 - beta2_) * grad[k] * grad[k];
      params[k] -= lr_ * (m_[k] / c1) / (std::sqrt(v_[k] / c2) + eps_);
    }
  }

  long long steps() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::vector<double> m_, v_;
  long long t_ = 0;
};

}  // namespace femdiff::nn
