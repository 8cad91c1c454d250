#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cfa/tensor.hpp"

namespace cfa {

/// Floor applied to channel intensities before they reach the log-domain path.
inline constexpr double kIntensityFloor = 1e-4;

struct RgbImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> data;  // row-major H x W x 3, values in [0, 1]

  double at(std::size_t y, std::size_t x, std::size_t c) const { return data[(y * width + x) * 3 + c]; }
  Tensor tensor() const;
};

/// Reads binary PPM (P6, 8 or 16 bit) or PNG (8 or 16 bit; gray, RGB, alpha
/// dropped). Values are scaled to [0, 1] by the maximum code value.
RgbImage load_image(const std::filesystem::path& path);

/// Writes an 8-bit (or 16-bit for PPM when requested) image; the extension
/// selects PNG or PPM. Values are clipped to [0, 1] and rounded.
void save_image(const RgbImage& image, const std::filesystem::path& path, int bits = 8);

/// Channels (R, G, B, W = R + G + B) as [H x W x 4].
Tensor build_channels(const RgbImage& image);

/// Adds i.i.d. N(0, std^2) noise to every value and floors the result at
/// kIntensityFloor. std == 0 returns the input unchanged.
Tensor add_noise(const Tensor& x, double std, std::uint64_t seed);

struct DatasetSplit {
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;
};

/// Deterministic shuffle of the sorted ids, then test, val, and train take
/// consecutive runs of the shuffled order.
DatasetSplit split_dataset(std::vector<std::string> ids, std::size_t n_test, std::size_t n_val, std::uint64_t seed);

// Three lines: "train: ...", "val: ...", "test: ..." with space-separated ids.
void write_split_manifest(const DatasetSplit& split, const std::filesystem::path& path);
DatasetSplit read_split_manifest(const std::filesystem::path& path);

/// Sorted file names of the loadable images in a flat directory.
std::vector<std::string> list_images(const std::filesystem::path& dir);

struct PatchBatch {
  Tensor x;  // [N x 3P x 3P x 4], noisy and floored
  Tensor y;  // [N x P x P x 3], clean
  std::vector<std::size_t> image_index;
  std::vector<std::size_t> top;   // top-left row of the y patch, multiple of P
  std::vector<std::size_t> left;  // top-left column of the y patch, multiple of P
};

/// Samples `batch` aligned patch pairs. The y patch sits at a multiple of P and
/// x is the 3P x 3P window centred on it. Randomness is a function of
/// (seed, stream) only.
PatchBatch sample_patch_pairs(const std::vector<RgbImage>& images, int period, std::size_t batch, std::uint64_t seed,
                              std::uint64_t stream, double noise_std);

/// Procedural "dead leaves" scene: overlapping occluding discs with
/// correlated colours, smooth shading and mild texture, in [0, 1].
RgbImage synthetic_image(std::size_t height, std::size_t width, std::uint64_t seed);

/// 2x downsampling by 2 x 2 box averaging; odd trailing rows/columns are dropped.
RgbImage downsample2(const RgbImage& image);

}  // namespace cfa
