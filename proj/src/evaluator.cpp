#include "cfa/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>
#include <thread>

#include "cfa/errors.hpp"
#include "cfa/sensor.hpp"

namespace cfa {

namespace {

// Mirror index into [0, n) without repeating the edge sample.
std::size_t reflect(std::ptrdiff_t i, std::size_t n) {
  const auto len = static_cast<std::ptrdiff_t>(n);
  if (len == 1) return 0;
  const std::ptrdiff_t period = 2 * (len - 1);
  i %= period;
  if (i < 0) i += period;
  return static_cast<std::size_t>(i < len ? i : period - i);
}

}  // namespace

Tensor pad_mosaic(const Tensor& mosaic, const HardPattern& pattern) {
  if (mosaic.rank() != 2) throw DimensionError("pad_mosaic: mosaic must be [H x W]");
  const std::ptrdiff_t p = pattern.period();
  const auto h = static_cast<std::ptrdiff_t>(mosaic.dim(0));
  const auto w = static_cast<std::ptrdiff_t>(mosaic.dim(1));
  if (h < p || w < p) throw DimensionError("pad_mosaic: image smaller than one pattern period");
  auto channel = [&](std::ptrdiff_t y, std::ptrdiff_t x) {
    return pattern.at(static_cast<int>(((y % p) + p) % p), static_cast<int>(((x % p) + p) % p));
  };
  const auto s = mosaic.data();
  const std::size_t fw = static_cast<std::size_t>(w + 2 * p);
  Tensor out({static_cast<std::size_t>(h + 2 * p), fw});
  auto o = out.data();
  for (std::ptrdiff_t y = -p; y < h + p; ++y) {
    for (std::ptrdiff_t x = -p; x < w + p; ++x) {
      std::ptrdiff_t sy = y, sx = x;
      if (y < 0 || y >= h || x < 0 || x >= w) {
        const auto my = static_cast<std::ptrdiff_t>(reflect(y, static_cast<std::size_t>(h)));
        const auto mx = static_cast<std::ptrdiff_t>(reflect(x, static_cast<std::size_t>(w)));
        const int want = channel(y, x);
        sy = my;
        sx = mx;
        if (channel(my, mx) != want) {
          // any (p+1) x (p+1) window inside the image holds a full period
          std::ptrdiff_t best = std::numeric_limits<std::ptrdiff_t>::max();
          for (std::ptrdiff_t cy = std::max<std::ptrdiff_t>(0, my - p); cy <= std::min(h - 1, my + p); ++cy)
            for (std::ptrdiff_t cx = std::max<std::ptrdiff_t>(0, mx - p); cx <= std::min(w - 1, mx + p); ++cx) {
              const std::ptrdiff_t d2 = (cy - my) * (cy - my) + (cx - mx) * (cx - mx);
              if (d2 < best && channel(cy, cx) == want) {
                best = d2;
                sy = cy;
                sx = cx;
              }
            }
        }
      }
      o[static_cast<std::size_t>(y + p) * fw + static_cast<std::size_t>(x + p)] =
          s[static_cast<std::size_t>(sy * w + sx)];
    }
  }
  return out;
}

Tensor reconstruct_image(const Tensor& mosaic, const HardPattern& pattern, const NetParams& params, std::size_t batch) {
  if (mosaic.rank() != 2) throw DimensionError("reconstruct_image: mosaic must be [H x W]");
  if (pattern.period() != params.shape.period)
    throw ContractError("reconstruct_image: pattern period does not match the network");
  const auto p = static_cast<std::size_t>(params.shape.period);
  const std::size_t h = mosaic.dim(0);
  const std::size_t w = mosaic.dim(1);
  if (h % p != 0 || w % p != 0) throw DimensionError("reconstruct_image: image size must be a multiple of P");
  const std::size_t th = h / p;
  const std::size_t tw = w / p;
  const std::size_t tiles = th * tw;
  const std::size_t side = 3 * p;
  const Tensor padded = pad_mosaic(mosaic, pattern);
  const std::size_t fw = w + 2 * p;
  const auto s = padded.data();
  Tensor out({h, w, 3}, 0.0);
  auto o = out.data();
  for (std::size_t start = 0; start < tiles; start += batch) {
    const std::size_t n = std::min(batch, tiles - start);
    std::vector<double> ctx(n * side * side);
    for (std::size_t b = 0; b < n; ++b) {
      const std::size_t ti = (start + b) / tw;
      const std::size_t tj = (start + b) % tw;
      // tile (ti, tj) starts at (ti * p + p, tj * p + p) in the padded frame
      for (std::size_t i = 0; i < side; ++i)
        std::copy_n(s.begin() + static_cast<std::ptrdiff_t>((ti * p + i) * fw + tj * p), side,
                    ctx.begin() + static_cast<std::ptrdiff_t>((b * side + i) * side));
    }
    const Tensor y_hat = reconstruct(Tensor({n, side, side}, std::move(ctx)), params).y_hat;
    for (std::size_t b = 0; b < n; ++b) {
      const std::size_t ti = (start + b) / tw;
      const std::size_t tj = (start + b) % tw;
      for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = 0; j < p; ++j)
          for (std::size_t c = 0; c < 3; ++c)
            o[((ti * p + i) * w + tj * p + j) * 3 + c] = y_hat[((b * p + i) * p + j) * 3 + c];
    }
  }
  return out;
}

double psnr(const Tensor& reference, const Tensor& recon) {
  if (reference.shape() != recon.shape()) throw DimensionError("psnr: shape mismatch");
  const auto a = reference.data();
  const auto b = recon.data();
  double sse = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - std::clamp(b[i], 0.0, 1.0);
    sse += d * d;
  }
  if (sse == 0.0) return std::numeric_limits<double>::infinity();
  return -10.0 * std::log10(sse / static_cast<double>(a.size()));
}

double quantile_nearest_rank(std::vector<double> values, double q) {
  if (values.empty()) throw ContractError("quantile of an empty set");
  if (!(q >= 0.0 && q <= 1.0)) throw ContractError("quantile level must be in [0, 1]");
  std::sort(values.begin(), values.end());
  const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(values.size())));
  return values[rank == 0 ? 0 : rank - 1];
}

Tensor simulate_capture(const RgbImage& image, const HardPattern& pattern, double noise_std, std::uint64_t seed) {
  Tensor x = add_noise(build_channels(image), noise_std, seed);
  for (double& v : x.data()) v = std::max(kIntensityFloor, v);
  return measure(pattern.one_hot(kNumChannels), x);
}

void evaluate(EvalReport& report, const std::string& label, const HardPattern& pattern,
              const std::vector<Reconstructor>& reconstructors, const std::vector<RgbImage>& images,
              const std::vector<double>& noise_levels, const EvalOptions& options) {
  if (images.empty()) throw ContractError("evaluate: empty image set");
  if (noise_levels.empty()) throw ContractError("evaluate: no noise levels");
  if (reconstructors.size() != 1 && reconstructors.size() != noise_levels.size())
    throw ContractError("evaluate: need one reconstructor per noise level or a single shared one");
  const std::size_t ps = options.patch_size;
  report.patch_size = ps;
  for (std::size_t k = 0; k < noise_levels.size(); ++k) {
    const double sigma = noise_levels[k];
    const auto& recon = reconstructors.size() == 1 ? reconstructors[0] : reconstructors[k];
    std::vector<std::vector<double>> per_image(images.size());
    auto work = [&](std::size_t idx) {
      const auto& img = images[idx];
      const std::uint64_t seed = options.seed * 1'000'003ULL + idx * 7919ULL + k;
      const Tensor estimate = recon(simulate_capture(img, pattern, sigma, seed));
      const Tensor truth = img.tensor();
      for (std::size_t py = 0; py + ps <= img.height; py += ps)
        for (std::size_t px = 0; px + ps <= img.width; px += ps) {
          std::vector<double> a, b;
          a.reserve(ps * ps * 3);
          b.reserve(ps * ps * 3);
          for (std::size_t y = py; y < py + ps; ++y)
            for (std::size_t x = px; x < px + ps; ++x)
              for (std::size_t c = 0; c < 3; ++c) {
                a.push_back(truth[(y * img.width + x) * 3 + c]);
                b.push_back(estimate[(y * img.width + x) * 3 + c]);
              }
          per_image[idx].push_back(psnr(Tensor({ps, ps, 3}, std::move(a)), Tensor({ps, ps, 3}, std::move(b))));
        }
    };
    const unsigned threads = std::max(1u, std::min<unsigned>(options.threads, static_cast<unsigned>(images.size())));
    if (threads == 1) {
      for (std::size_t i = 0; i < images.size(); ++i) work(i);
    } else {
      std::vector<std::thread> pool;
      for (unsigned t = 0; t < threads; ++t)
        pool.emplace_back([&, t] {
          for (std::size_t i = t; i < images.size(); i += threads) work(i);
        });
      for (auto& th : pool) th.join();
    }
    EvalCell cell;
    for (const auto& v : per_image) cell.psnrs.insert(cell.psnrs.end(), v.begin(), v.end());
    if (cell.psnrs.empty()) throw ContractError("evaluate: images smaller than one evaluation patch");
    cell.q25 = quantile_nearest_rank(cell.psnrs, 0.25);
    cell.q50 = quantile_nearest_rank(cell.psnrs, 0.50);
    cell.q75 = quantile_nearest_rank(cell.psnrs, 0.75);
    report.cells[label][sigma] = std::move(cell);
  }
}

EvalReport evaluate(const HardPattern& pattern, const std::vector<NetParams>& params,
                    const std::vector<RgbImage>& images, const std::vector<double>& noise_levels,
                    const EvalOptions& options) {
  if (params.empty()) throw ContractError("evaluate: no network parameters");
  std::vector<Reconstructor> recon;
  for (const auto& p : params) recon.push_back([&p, &pattern](const Tensor& s) { return reconstruct_image(s, pattern, p); });
  EvalReport report;
  evaluate(report, "network", pattern, recon, images, noise_levels, options);
  return report;
}

std::string EvalReport::to_table() const {
  std::ostringstream os;
  os << "PSNR (dB) quantiles over non-overlapping " << patch_size << "x" << patch_size << " patches\n";
  os << std::left << std::setw(12) << "noise_std" << std::setw(12) << "percentile";
  for (const auto& [label, _] : cells) os << std::setw(14) << label;
  os << '\n';
  std::vector<double> sigmas;
  for (const auto& [label, by_sigma] : cells)
    for (const auto& [sigma, _] : by_sigma)
      if (std::find(sigmas.begin(), sigmas.end(), sigma) == sigmas.end()) sigmas.push_back(sigma);
  std::sort(sigmas.begin(), sigmas.end());
  os << std::fixed;
  for (double sigma : sigmas) {
    const std::pair<const char*, double EvalCell::*> rows[] = {
        {"25%", &EvalCell::q25}, {"50%", &EvalCell::q50}, {"75%", &EvalCell::q75}};
    for (const auto& [name, member] : rows) {
      os << std::setw(12) << std::setprecision(4) << sigma << std::setw(12) << name;
      for (const auto& [label, by_sigma] : cells) {
        auto it = by_sigma.find(sigma);
        if (it == by_sigma.end()) os << std::setw(14) << "-";
        else os << std::setw(14) << std::setprecision(2) << it->second.*member;
      }
      os << '\n';
    }
  }
  return os.str();
}

std::string EvalReport::to_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "pattern,noise_std,count,q25,q50,q75\n";
  for (const auto& [label, by_sigma] : cells)
    for (const auto& [sigma, cell] : by_sigma)
      os << label << ',' << sigma << ',' << cell.count() << ',' << cell.q25 << ',' << cell.q50 << ',' << cell.q75
         << '\n';
  return os.str();
}

RgbImage render_pattern(const HardPattern& pattern, int scale) {
  if (scale < 1) throw ContractError("render scale must be positive");
  static constexpr double colours[4][3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 1, 1}};
  RgbImage img;
  img.height = img.width = static_cast<std::size_t>(pattern.period() * scale);
  img.data.resize(img.height * img.width * 3);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x) {
      const int ch = pattern.at(static_cast<int>(y) / scale, static_cast<int>(x) / scale);
      for (std::size_t c = 0; c < 3; ++c) img.data[(y * img.width + x) * 3 + c] = colours[ch][c];
    }
  return img;
}

void export_pattern_image(const HardPattern& pattern, const std::filesystem::path& path, int scale) {
  save_image(render_pattern(pattern, scale), path);
}

HardPattern classify_pattern_image(const RgbImage& image, int period) {
  if (period < 1 || image.height != image.width || image.height % static_cast<std::size_t>(period) != 0)
    throw DimensionError("pattern raster must be square with a multiple of P pixels per side");
  const std::size_t scale = image.height / static_cast<std::size_t>(period);
  std::vector<int> grid(static_cast<std::size_t>(period * period));
  for (int i = 0; i < period; ++i)
    for (int j = 0; j < period; ++j) {
      const std::size_t y = static_cast<std::size_t>(i) * scale + scale / 2;
      const std::size_t x = static_cast<std::size_t>(j) * scale + scale / 2;
      const bool r = image.at(y, x, 0) > 0.5, g = image.at(y, x, 1) > 0.5, b = image.at(y, x, 2) > 0.5;
      int ch;
      if (r && g && b) ch = 3;
      else if (r && !g && !b) ch = 0;
      else if (!r && g && !b) ch = 1;
      else if (!r && !g && b) ch = 2;
      else throw ContractError("pattern raster contains an unknown colour");
      grid[static_cast<std::size_t>(i * period + j)] = ch;
    }
  return {period, std::move(grid)};
}

}  // namespace cfa
