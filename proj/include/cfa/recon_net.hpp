#pragma once

#include <cstdint>
#include <vector>

#include "cfa/autodiff.hpp"
#include "cfa/tensor.hpp"

namespace cfa {

struct NetShape {
  int period = 8;     // P: output patch size; the input patch is 3P x 3P
  int proposals = 24; // K proposals per output colour intensity
  int features = 128; // F outputs of every gating convolution
  bool normalize_gates = false;  // softmax over the K gates of each output

  std::size_t in_side() const { return 3 * static_cast<std::size_t>(period); }
  std::size_t in_size() const { return in_side() * in_side(); }
  std::size_t locations() const { return static_cast<std::size_t>(period * period); }
  std::size_t per_location() const { return 3 * static_cast<std::size_t>(proposals); }
  std::size_t out_size() const { return locations() * per_location(); }
};

/// Weights of the two-path reconstruction network.
///
/// Multiplicative path: w_log [9P^2 x P^2*3K] (no bias), applied to log(s) and
/// exponentiated, then w_mix [P^2 x 3K x 3K] mixes the 3K values at each
/// output location. Gating path: conv1 (P x P, stride P) and conv2 (3 x 3),
/// each with F outputs and relu, then the fully-connected w_gate + b_gate.
struct NetParams {
  NetShape shape;
  Tensor w_log;
  Tensor w_mix;
  Tensor conv1_k, conv1_b;
  Tensor conv2_k, conv2_b;
  Tensor w_gate, b_gate;

  /// Fixed enumeration order used by the optimizer and checkpoints.
  std::vector<Tensor*> tensors();
  std::vector<const Tensor*> tensors() const;
};

/// Zero-mean Gaussian weights with std 1/sqrt(fan_in), zero biases.
/// `log_scale` multiplies the std of w_log only. With `local_radius` >= 0 each
/// w_log column additionally gets random positive weights summing to one over
/// the (2r+1)^2 input pixels around its own output location, so every proposal
/// starts out as a weighted geometric mean of nearby measurements.
NetParams init_params(const NetShape& shape, std::uint64_t seed, double log_scale = 1.0, int local_radius = -1);

/// NetParams bound as leaves of a graph.
struct BoundParams {
  ad::Var w_log, w_mix, conv1_k, conv1_b, conv2_k, conv2_b, w_gate, b_gate;
  std::vector<ad::Var> all() const { return {w_log, w_mix, conv1_k, conv1_b, conv2_k, conv2_b, w_gate, b_gate}; }
};

BoundParams bind(ad::Graph& graph, const NetParams& params, bool trainable = true);

/// Outputs for a batch: y_hat [N x P x P x 3]; f and lambda [N x P x P x 3 x K].
struct ReconVars {
  ad::Var y_hat;
  ad::Var f;
  ad::Var lambda;
};

// Inputs are measurement patches [N x 3P x 3P] with every value > 0.
ad::Var path_multiplicative(ad::Var patches, const BoundParams& params, const NetShape& shape);
ad::Var path_gating(ad::Var patches, const BoundParams& params, const NetShape& shape);
// y_hat(n, colour) = sum_k lambda(n, colour, k) * f(n, colour, k).
ad::Var combine(ad::Var f, ad::Var lambda);

ReconVars forward(ad::Var patches, const BoundParams& params, const NetShape& shape);

struct ReconOutput {
  Tensor y_hat;
  Tensor f;
  Tensor lambda;
};

/// Inference without gradients. Accepts [3P x 3P] or [N x 3P x 3P]; a single
/// patch yields outputs without the batch axis.
ReconOutput reconstruct(const Tensor& patches, const NetParams& params);

}  // namespace cfa
