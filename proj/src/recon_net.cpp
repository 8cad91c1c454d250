#include "cfa/recon_net.hpp"

#include <cmath>
#include <random>

#include "cfa/errors.hpp"

namespace cfa {

std::vector<Tensor*> NetParams::tensors() {
  return {&w_log, &w_mix, &conv1_k, &conv1_b, &conv2_k, &conv2_b, &w_gate, &b_gate};
}

std::vector<const Tensor*> NetParams::tensors() const {
  return {&w_log, &w_mix, &conv1_k, &conv1_b, &conv2_k, &conv2_b, &w_gate, &b_gate};
}

namespace {

Tensor gaussian(Shape shape, std::size_t fan_in, std::mt19937_64& rng, double gain = 1.0) {
  std::normal_distribution<double> dist(0.0, gain / std::sqrt(static_cast<double>(fan_in)));
  std::vector<double> data(shape_size(shape));
  for (double& v : data) v = dist(rng);
  return Tensor(std::move(shape), std::move(data));
}

void add_local_prior(NetParams& params, int radius, std::mt19937_64& rng) {
  const NetShape& shape = params.shape;
  if (radius >= shape.period) throw ContractError("local_radius must be smaller than the period");
  const int p = shape.period;
  const int side = static_cast<int>(shape.in_side());
  const std::size_t out = shape.out_size();
  std::gamma_distribution<double> draw(1.0, 1.0);
  auto w = params.w_log.data();
  std::vector<double> weights;
  for (std::size_t o = 0; o < out; ++o) {
    const auto loc = static_cast<int>(o / shape.per_location());
    const int ci = p + loc / p;
    const int cj = p + loc % p;
    weights.clear();
    double total = 0.0;
    for (int di = -radius; di <= radius; ++di)
      for (int dj = -radius; dj <= radius; ++dj) total += weights.emplace_back(draw(rng));
    std::size_t k = 0;
    for (int di = -radius; di <= radius; ++di)
      for (int dj = -radius; dj <= radius; ++dj) {
        const auto in = static_cast<std::size_t>((ci + di) * side + cj + dj);
        w[in * out + o] += weights[k++] / total;
      }
  }
}

}  // namespace

NetParams init_params(const NetShape& shape, std::uint64_t seed, double log_scale, int local_radius) {
  if (shape.period < 1 || shape.proposals < 1 || shape.features < 1)
    throw ContractError("network sizes must be positive");
  const auto p = static_cast<std::size_t>(shape.period);
  const auto f = static_cast<std::size_t>(shape.features);
  std::mt19937_64 rng(seed);
  NetParams params;
  params.shape = shape;
  if (!(log_scale > 0.0)) throw ContractError("log_scale must be positive");
  params.w_log = gaussian({shape.in_size(), shape.out_size()}, shape.in_size(), rng, log_scale);
  params.w_mix = gaussian({shape.locations(), shape.per_location(), shape.per_location()}, shape.per_location(), rng);
  params.conv1_k = gaussian({p, p, 1, f}, p * p, rng);
  params.conv1_b = Tensor({f}, 0.0);
  params.conv2_k = gaussian({3, 3, f, f}, 9 * f, rng);
  params.conv2_b = Tensor({f}, 0.0);
  params.w_gate = gaussian({f, shape.out_size()}, f, rng);
  params.b_gate = Tensor({shape.out_size()}, 0.0);
  if (local_radius >= 0) add_local_prior(params, local_radius, rng);
  return params;
}

BoundParams bind(ad::Graph& graph, const NetParams& params, bool trainable) {
  auto leaf = [&](const Tensor& t) { return trainable ? graph.parameter(t) : graph.constant(t); };
  return {leaf(params.w_log),   leaf(params.w_mix),   leaf(params.conv1_k), leaf(params.conv1_b),
          leaf(params.conv2_k), leaf(params.conv2_b), leaf(params.w_gate),  leaf(params.b_gate)};
}

namespace {

std::size_t check_patches(ad::Var patches, const NetShape& shape) {
  const auto& s = patches.shape();
  if (s.size() != 3 || s[1] != shape.in_side() || s[2] != shape.in_side())
    throw DimensionError("network input must be [N x 3P x 3P], got " + shape_string(s));
  return s[0];
}

}  // namespace

ad::Var path_multiplicative(ad::Var patches, const BoundParams& params, const NetShape& shape) {
  const std::size_t n = check_patches(patches, shape);
  auto logs = ad::log(ad::reshape(patches, {n, shape.in_size()}));
  auto products = ad::exp(ad::matmul(logs, params.w_log));
  auto per_loc = ad::reshape(products, {n, shape.locations(), shape.per_location()});
  auto mixed = ad::blockwise_matmul(per_loc, params.w_mix);
  const auto p = static_cast<std::size_t>(shape.period);
  return ad::reshape(mixed, {n, p, p, 3, static_cast<std::size_t>(shape.proposals)});
}

ad::Var path_gating(ad::Var patches, const BoundParams& params, const NetShape& shape) {
  const std::size_t n = check_patches(patches, shape);
  const auto p = static_cast<std::size_t>(shape.period);
  const auto side = shape.in_side();
  auto x = ad::reshape(patches, {n, side, side, 1});
  x = ad::relu(ad::add_bias(ad::conv2d(x, params.conv1_k, p), params.conv1_b));
  x = ad::relu(ad::add_bias(ad::conv2d(x, params.conv2_k, 1), params.conv2_b));
  x = ad::reshape(x, {n, static_cast<std::size_t>(shape.features)});
  auto gates = ad::add_bias(ad::matmul(x, params.w_gate), params.b_gate);
  gates = ad::reshape(gates, {n, p, p, 3, static_cast<std::size_t>(shape.proposals)});
  if (shape.normalize_gates) gates = ad::softmax(gates);
  return gates;
}

ad::Var combine(ad::Var f, ad::Var lambda) {
  if (f.shape() != lambda.shape()) throw DimensionError("combine: proposals and gates differ in shape");
  return ad::sum_last_axis(ad::mul(lambda, f));
}

ReconVars forward(ad::Var patches, const BoundParams& params, const NetShape& shape) {
  auto f = path_multiplicative(patches, params, shape);
  auto lambda = path_gating(patches, params, shape);
  return {combine(f, lambda), f, lambda};
}

ReconOutput reconstruct(const Tensor& patches, const NetParams& params) {
  const bool single = patches.rank() == 2;
  ad::Graph g;
  auto input = single ? g.constant(patches.reshaped({1, patches.dim(0), patches.dim(1)})) : g.constant(patches);
  auto out = forward(input, bind(g, params, false), params.shape);
  if (!single) return {out.y_hat.value(), out.f.value(), out.lambda.value()};
  auto drop = [](const Tensor& t) { return t.reshaped(Shape(t.shape().begin() + 1, t.shape().end())); };
  return {drop(out.y_hat.value()), drop(out.f.value()), drop(out.lambda.value())};
}

}  // namespace cfa
