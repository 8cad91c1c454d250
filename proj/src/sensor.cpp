#include "cfa/sensor.hpp"

#include <cmath>
#include <random>

#include "cfa/errors.hpp"

namespace cfa {

double AnnealSchedule::alpha_at(std::int64_t iteration) const {
  if (iteration < 0) throw ContractError("iteration must be non-negative");
  const double gt = gamma * static_cast<double>(iteration);
  return 1.0 + gt * gt;
}

SensorPattern::SensorPattern(int period, int channels, Tensor logits)
    : period_(period), channels_(channels), logits_(std::move(logits)) {
  if (period_ < 1) throw DimensionError("sensor period must be positive");
  if (channels_ < 2) throw DimensionError("sensor needs at least two channels");
  const auto p = static_cast<std::size_t>(period_);
  if (logits_.shape() != Shape{p, p, static_cast<std::size_t>(channels_)})
    throw DimensionError("sensor logits must be [P x P x C]");
}

SensorPattern SensorPattern::random(int period, int channels, std::uint64_t seed) {
  const auto p = static_cast<std::size_t>(period);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-0.01, 0.01);
  std::vector<double> w(p * p * static_cast<std::size_t>(channels));
  for (double& v : w) v = dist(rng);
  return {period, channels, Tensor({p, p, static_cast<std::size_t>(channels)}, std::move(w))};
}

ad::Var soft_select(ad::Var logits, double alpha) {
  if (!(alpha > 0.0)) throw ContractError("soft_select: alpha must be positive");
  return ad::softmax(ad::scale(logits, alpha));
}

Tensor soft_select(const Tensor& logits, double alpha) {
  ad::Graph g;
  return soft_select(g.constant(logits), alpha).value();
}

HardPattern harden(const Tensor& logits) {
  if (logits.rank() != 3 || logits.dim(0) != logits.dim(1)) throw DimensionError("harden: logits must be [P x P x C]");
  const std::size_t ch = logits.dim(2);
  const auto w = logits.data();
  std::vector<int> grid(logits.dim(0) * logits.dim(1));
  for (std::size_t px = 0; px < grid.size(); ++px) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < ch; ++c)
      if (w[px * ch + c] > w[px * ch + best]) best = c;
    grid[px] = static_cast<int>(best);
  }
  return {static_cast<int>(logits.dim(0)), std::move(grid)};
}

ad::Var measure(ad::Var selection, ad::Var x) {
  const auto& ss = selection.shape();
  const auto& xs = x.shape();
  if (ss.size() != 3 || ss[0] != ss[1]) throw DimensionError("measure: selection must be [P x P x C]");
  if (xs.size() != 3 && xs.size() != 4) throw DimensionError("measure: x must be [H x W x C] or [N x H x W x C]");
  const std::size_t p = ss[0];
  const std::size_t ch = ss[2];
  if (xs.back() != ch) throw DimensionError("measure: channel count mismatch");
  const bool batched = xs.size() == 4;
  const std::size_t n = batched ? xs[0] : 1;
  const std::size_t h = xs[xs.size() - 3];
  const std::size_t w = xs[xs.size() - 2];

  Shape out_shape = batched ? Shape{n, h, w} : Shape{h, w};
  Tensor out(out_shape, 0.0);
  const auto sel = selection.value().data();
  const auto xv = x.value().data();
  auto o = out.data();
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        const double* s = sel.data() + ((i % p) * p + (j % p)) * ch;
        const double* v = xv.data() + ((b * h + i) * w + j) * ch;
        double acc = 0.0;
        for (std::size_t c = 0; c < ch; ++c) acc += s[c] * v[c];
        o[(b * h + i) * w + j] = acc;
      }

  const auto is = selection.id();
  const auto ix = x.id();
  return selection.graph().record(std::move(out), {is, ix}, [=](ad::Graph& g, std::span<const double> go) {
    const auto selv = g.value(is).data();
    const auto xval = g.value(ix).data();
    auto gs = g.grad_buffer(is);
    auto gx = g.grad_buffer(ix);
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
          const std::size_t pix = (b * h + i) * w + j;
          const std::size_t sbase = ((i % p) * p + (j % p)) * ch;
          for (std::size_t c = 0; c < ch; ++c) {
            if (!gs.empty()) gs[sbase + c] += go[pix] * xval[pix * ch + c];
            if (!gx.empty()) gx[pix * ch + c] += go[pix] * selv[sbase + c];
          }
        }
  });
}

Tensor measure(const Tensor& selection, const Tensor& x) {
  ad::Graph g;
  return measure(g.constant(selection), g.constant(x)).value();
}

double mean_entropy(const Tensor& selection) {
  if (selection.rank() < 2) throw DimensionError("mean_entropy: selection must have a channel axis");
  const std::size_t ch = selection.shape().back();
  const auto v = selection.data();
  const std::size_t pixels = v.size() / ch;
  double total = 0.0;
  for (std::size_t px = 0; px < pixels; ++px) {
    double mass = 0.0;
    double h = 0.0;
    for (std::size_t c = 0; c < ch; ++c) {
      const double q = v[px * ch + c];
      if (q < 0.0) throw ContractError("mean_entropy: negative probability");
      mass += q;
      if (q > 0.0) h -= q * std::log(q);
    }
    if (std::abs(mass - 1.0) > 1e-9) throw ContractError("mean_entropy: pixel distribution does not sum to 1");
    total += h;
  }
  return total / static_cast<double>(pixels);
}

}  // namespace cfa
