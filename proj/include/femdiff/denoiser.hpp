#pragma once

#include "femdiff/core.hpp"

namespace femdiff {

/// Estimates E[A_0 | A_t = a_t] at noise level sigma, with reverse-mode access to its input Jacobian.
class Denoiser {
 public:
  virtual ~Denoiser() = default;

  virtual Field denoise(const Field& a_t, double sigma) const = 0;

  /// Gradient of <upstream, denoise(a_t, sigma)> with respect to a_t.
  virtual Field vjp(const Field& a_t, double sigma, const Field& upstream) const = 0;
};

}  // namespace femdiff
