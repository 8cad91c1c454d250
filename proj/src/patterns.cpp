#include "cfa/patterns.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "cfa/errors.hpp"

namespace cfa {

char channel_letter(int channel) {
  static constexpr char letters[] = {'R', 'G', 'B', 'W'};
  if (channel < 0 || channel >= kNumChannels) throw ContractError("channel index out of range");
  return letters[channel];
}

HardPattern::HardPattern(int period, std::vector<int> channels) : period_(period), channels_(std::move(channels)) {
  if (period_ < 1) throw DimensionError("pattern period must be positive");
  if (channels_.size() != static_cast<std::size_t>(period_ * period_))
    throw DimensionError("pattern grid must be exactly P x P");
  for (int c : channels_)
    if (c < 0 || c >= kNumChannels) throw ContractError("pattern channel index out of range");
}

std::array<int, kNumChannels> HardPattern::census() const {
  std::array<int, kNumChannels> counts{};
  for (int c : channels_) ++counts[static_cast<std::size_t>(c)];
  return counts;
}

Tensor HardPattern::one_hot(int channels) const {
  const auto p = static_cast<std::size_t>(period_);
  const auto ch = static_cast<std::size_t>(channels);
  Tensor out({p, p, ch}, 0.0);
  for (std::size_t i = 0; i < channels_.size(); ++i) {
    if (channels_[i] >= channels) throw ContractError("pattern uses a channel beyond the selection width");
    out[i * ch + static_cast<std::size_t>(channels_[i])] = 1.0;
  }
  return out;
}

HardPattern bayer_pattern(int period) {
  if (period < 2 || period % 2 != 0) throw DimensionError("Bayer pattern period must be even");
  constexpr int unit[2][2] = {{1, 0}, {2, 1}};  // G R / B G
  std::vector<int> grid(static_cast<std::size_t>(period * period));
  for (int i = 0; i < period; ++i)
    for (int j = 0; j < period; ++j) grid[static_cast<std::size_t>(i * period + j)] = unit[i % 2][j % 2];
  return {period, std::move(grid)};
}

HardPattern cfz_pattern(int period, int rate) {
  if (rate < 2) throw DimensionError("CFZ sampling rate must be at least 2");
  if (period < 1 || period % rate != 0) throw DimensionError("CFZ sampling rate must divide the period");
  constexpr int unit[2][2] = {{1, 0}, {2, 1}};
  std::vector<int> grid(static_cast<std::size_t>(period * period), static_cast<int>(Channel::W));
  for (int i = 0; i < period; ++i)
    for (int j = 0; j < period; ++j) {
      const int ci = i % rate;
      const int cj = j % rate;
      if (ci < 2 && cj < 2) grid[static_cast<std::size_t>(i * period + j)] = unit[ci][cj];
    }
  return {period, std::move(grid)};
}

std::string format_pattern(const HardPattern& pattern) {
  std::ostringstream os;
  os << "CFA v1 P=" << pattern.period() << '\n';
  for (int i = 0; i < pattern.period(); ++i) {
    for (int j = 0; j < pattern.period(); ++j) os << (j ? " " : "") << channel_letter(pattern.at(i, j));
    os << '\n';
  }
  return os.str();
}

HardPattern parse_pattern(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  int line_no = 1;
  if (!std::getline(in, line)) throw ParseError("empty pattern file", line_no);
  int period = 0;
  {
    std::istringstream header(line);
    std::string magic, version, size;
    if (!(header >> magic >> version >> size) || magic != "CFA" || version != "v1" || size.rfind("P=", 0) != 0)
      throw ParseError("expected header 'CFA v1 P=<int>'", line_no);
    try {
      std::size_t used = 0;
      period = std::stoi(size.substr(2), &used);
      if (used != size.size() - 2) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      throw ParseError("bad period in header", line_no);
    }
    std::string extra;
    if (header >> extra) throw ParseError("unexpected token after header", line_no);
    if (period < 1) throw ParseError("period must be positive", line_no);
  }
  std::vector<int> grid;
  grid.reserve(static_cast<std::size_t>(period * period));
  for (int row = 0; row < period; ++row) {
    ++line_no;
    if (!std::getline(in, line)) throw ParseError("missing pattern row", line_no);
    std::istringstream tokens(line);
    std::string tok;
    int count = 0;
    while (tokens >> tok) {
      int ch = -1;
      if (tok == "R") ch = 0;
      else if (tok == "G") ch = 1;
      else if (tok == "B") ch = 2;
      else if (tok == "W") ch = 3;
      else throw ParseError("unknown channel token '" + tok + "'", line_no);
      grid.push_back(ch);
      ++count;
    }
    if (count != period) throw ParseError("row must have exactly P tokens", line_no);
  }
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") != std::string::npos) throw ParseError("trailing content", line_no);
  }
  return {period, std::move(grid)};
}

void write_pattern(const HardPattern& pattern, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << format_pattern(pattern);
  if (!out) throw IoError("failed writing " + path.string());
}

HardPattern read_pattern(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open pattern file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_pattern(buf.str());
}

namespace {

struct Offset {
  int dy;
  int dx;
  int dist2;
};

}  // namespace

Tensor bilinear_demosaick(const Tensor& mosaic, const HardPattern& pattern) {
  if (mosaic.rank() != 2) throw DimensionError("bilinear_demosaick: mosaic must be [H x W]");
  const auto h = static_cast<int>(mosaic.dim(0));
  const auto w = static_cast<int>(mosaic.dim(1));
  const int p = pattern.period();
  if (h < p || w < p) throw DimensionError("bilinear_demosaick: image smaller than the pattern period");
  const auto counts = pattern.census();
  for (int c = 0; c < 3; ++c)
    if (counts[static_cast<std::size_t>(c)] == 0)
      throw ContractError(std::string("pattern has no ") + channel_letter(c) + " measurement sites");

  // Window offsets grouped by squared distance, nearest first.
  std::vector<Offset> offsets;
  for (int dy = -p; dy <= p; ++dy)
    for (int dx = -p; dx <= p; ++dx)
      if (dy != 0 || dx != 0) offsets.push_back({dy, dx, dy * dy + dx * dx});
  std::stable_sort(offsets.begin(), offsets.end(), [](const Offset& a, const Offset& b) { return a.dist2 < b.dist2; });

  Tensor out({static_cast<std::size_t>(h), static_cast<std::size_t>(w), 3}, 0.0);
  const auto s = mosaic.data();
  auto o = out.data();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int own = pattern.tiled(static_cast<std::size_t>(y), static_cast<std::size_t>(x));
      for (int c = 0; c < 3; ++c) {
        const auto dst = static_cast<std::size_t>((y * w + x) * 3 + c);
        if (own == c) {
          o[dst] = s[static_cast<std::size_t>(y * w + x)];
          continue;
        }
        double num = 0.0;
        double den = 0.0;
        int ring = -1;
        for (const auto& off : offsets) {
          if (ring >= 0 && off.dist2 != ring) break;
          const int yy = y + off.dy;
          const int xx = x + off.dx;
          if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
          if (pattern.tiled(static_cast<std::size_t>(yy), static_cast<std::size_t>(xx)) != c) continue;
          ring = off.dist2;
          const double weight = 1.0 / std::sqrt(static_cast<double>(off.dist2));
          num += weight * s[static_cast<std::size_t>(yy * w + xx)];
          den += weight;
        }
        o[dst] = num / den;
      }
    }
  return out;
}

}  // namespace cfa
