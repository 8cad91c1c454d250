#pragma once

#include <cstdint>

#include "cfa/autodiff.hpp"
#include "cfa/patterns.hpp"
#include "cfa/tensor.hpp"

namespace cfa {

/// Quadratic temperature schedule: alpha_t = 1 + (gamma * t)^2.
struct AnnealSchedule {
  double gamma = 2.5e-5;

  double alpha_at(std::int64_t iteration) const;
};

/// Learnable sensor layer: per-pixel selection logits w(n) over C channels
/// for one P x P period of the mosaic.
class SensorPattern {
 public:
  SensorPattern() = default;
  SensorPattern(int period, int channels, Tensor logits);

  /// Logits drawn i.i.d. uniform on [-0.01, 0.01].
  static SensorPattern random(int period, int channels, std::uint64_t seed);

  int period() const { return period_; }
  int channels() const { return channels_; }
  const Tensor& logits() const { return logits_; }
  Tensor& logits() { return logits_; }

 private:
  int period_ = 0;
  int channels_ = 0;
  Tensor logits_;
};

/// Soft selection softmax(alpha * w) per pixel, differentiable w.r.t. the logits.
ad::Var soft_select(ad::Var logits, double alpha);
Tensor soft_select(const Tensor& logits, double alpha);

/// Per-pixel argmax of the logits; ties go to the lowest channel index.
HardPattern harden(const Tensor& logits);
inline HardPattern harden(const SensorPattern& pattern) { return harden(pattern.logits()); }

/// Sensor measurement s(n) = I(n)^T x(n) with the P x P selection tiled over
/// the image. selection is [P x P x C]; x is [H x W x C] or [N x H x W x C];
/// the result drops the channel axis. Differentiable in both arguments.
ad::Var measure(ad::Var selection, ad::Var x);
Tensor measure(const Tensor& selection, const Tensor& x);

/// Mean over pixels of the Shannon entropy (nats) of each pixel's channel
/// distribution. Throws ContractError if a pixel is not a distribution.
double mean_entropy(const Tensor& selection);

}  // namespace cfa
