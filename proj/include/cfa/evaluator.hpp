#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "cfa/data.hpp"
#include "cfa/patterns.hpp"
#include "cfa/recon_net.hpp"

namespace cfa {

/// The mosaic s [H x W] padded by P on every side [(H + 2P) x (W + 2P)].
/// A padded site copies the in-image site of its own pattern channel that is
/// nearest to its mirror position (ties: first in row-major order). Plain
/// mirroring would feed the network measurements no sensor with this pattern
/// produces once the pattern's period exceeds 2; for Bayer the mirror site
/// already matches, so this is ordinary reflection there.
Tensor pad_mosaic(const Tensor& mosaic, const HardPattern& pattern);

/// Full-image reconstruction from a mosaic s [H x W] taken through `pattern`:
/// every P x P output tile is produced from the 3P x 3P context centred on it,
/// with border context from pad_mosaic(). Returns [H x W x 3].
Tensor reconstruct_image(const Tensor& mosaic, const HardPattern& pattern, const NetParams& params,
                         std::size_t batch = 256);

/// PSNR (peak 1) after clipping `recon` to [0, 1]. Identical inputs give +inf.
double psnr(const Tensor& reference, const Tensor& recon);

/// Nearest-rank quantile: element ceil(q * n) (1-based) of the sorted values.
double quantile_nearest_rank(std::vector<double> values, double q);

/// Maps a mosaic [H x W] to an RGB estimate [H x W x 3].
using Reconstructor = std::function<Tensor(const Tensor& mosaic)>;

struct EvalCell {
  std::vector<double> psnrs;
  double q25 = 0.0, q50 = 0.0, q75 = 0.0;
  std::size_t count() const { return psnrs.size(); }
};

struct EvalReport {
  std::size_t patch_size = 64;
  // label -> noise std -> results
  std::map<std::string, std::map<double, EvalCell>> cells;

  std::string to_table() const;
  std::string to_csv() const;
};

struct EvalOptions {
  std::size_t patch_size = 64;
  std::uint64_t seed = 0;
  unsigned threads = 1;
};

/// Corrupts each image with noise, measures it through the tiled pattern,
/// reconstructs it, and scores every non-overlapping patch_size^2 patch.
/// `reconstructors` holds one entry per noise level, or a single shared one.
void evaluate(EvalReport& report, const std::string& label, const HardPattern& pattern,
              const std::vector<Reconstructor>& reconstructors, const std::vector<RgbImage>& images,
              const std::vector<double>& noise_levels, const EvalOptions& options = {});

EvalReport evaluate(const HardPattern& pattern, const std::vector<NetParams>& params,
                    const std::vector<RgbImage>& images, const std::vector<double>& noise_levels,
                    const EvalOptions& options = {});

/// The tiled mosaic of an image under a pattern at a noise level, as used by evaluate().
Tensor simulate_capture(const RgbImage& image, const HardPattern& pattern, double noise_std, std::uint64_t seed);

/// Renders the pattern as an RGB raster, `scale` pixels per pattern cell;
/// R/G/B sites in their colour, W sites white.
RgbImage render_pattern(const HardPattern& pattern, int scale = 1);
void export_pattern_image(const HardPattern& pattern, const std::filesystem::path& path, int scale = 1);
/// Inverse of render_pattern for an unscaled-or-scaled raster.
HardPattern classify_pattern_image(const RgbImage& image, int period);

}  // namespace cfa
