#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "cfa/tensor.hpp"

namespace cfa {

enum class Channel : int { R = 0, G = 1, B = 2, W = 3 };

inline constexpr int kNumChannels = 4;

char channel_letter(int channel);

/// A P x P grid of channel indices that tiles the sensor plane.
class HardPattern {
 public:
  HardPattern() = default;
  HardPattern(int period, std::vector<int> channels);

  int period() const { return period_; }
  int at(int i, int j) const { return channels_[static_cast<std::size_t>(i * period_ + j)]; }
  // Channel at image coordinate (y, x) of the periodically tiled pattern.
  int tiled(std::size_t y, std::size_t x) const {
    return at(static_cast<int>(y % static_cast<std::size_t>(period_)),
              static_cast<int>(x % static_cast<std::size_t>(period_)));
  }
  const std::vector<int>& channels() const { return channels_; }

  /// Pixel counts per channel, indexed R, G, B, W.
  std::array<int, kNumChannels> census() const;

  /// One-hot selection tensor [P x P x channels].
  Tensor one_hot(int channels = kNumChannels) const;

  friend bool operator==(const HardPattern&, const HardPattern&) = default;

 private:
  int period_ = 0;
  std::vector<int> channels_;
};

// 2x2 unit [[G, R], [B, G]] tiled to P x P. P must be even.
HardPattern bayer_pattern(int period);

// Unfiltered (W) everywhere except a 2x2 Bayer block at the top-left corner of
// every rate x rate cell.
HardPattern cfz_pattern(int period, int rate);

// Text format:
//   CFA v1 P=<int>
//   P rows of P tokens from {R, G, B, W}
std::string format_pattern(const HardPattern& pattern);
HardPattern parse_pattern(const std::string& text);
void write_pattern(const HardPattern& pattern, const std::filesystem::path& path);
HardPattern read_pattern(const std::filesystem::path& path);

/// Classical reference reconstruction from a single-channel mosaic s [H x W].
///
/// For every colour channel, pixels measured in that channel keep their value.
/// Every other pixel (W sites included) takes the inverse-distance-weighted
/// mean of the nearest measured sites of that channel inside the
/// (2P+1) x (2P+1) window around it. "Nearest" means all sites sharing the
/// minimal Euclidean distance, so on a Bayer mosaic this is plain bilinear
/// interpolation. Returns [H x W x 3].
Tensor bilinear_demosaick(const Tensor& mosaic, const HardPattern& pattern);

}  // namespace cfa
