#include "cfa/data.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <numbers>
#include <random>
#include <sstream>

#include "cfa/errors.hpp"

namespace cfa {

Tensor RgbImage::tensor() const { return Tensor({height, width, 3}, data); }

namespace {

std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

std::string lower_extension(const std::filesystem::path& path) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext;
}

// Skips whitespace and '#' comments between PPM header fields.
std::size_t read_ppm_number(std::istream& in) {
  char c = 0;
  while (in.get(c)) {
    if (c == '#') {
      std::string rest;
      std::getline(in, rest);
    } else if (!std::isspace(static_cast<unsigned char>(c))) {
      in.unget();
      break;
    }
  }
  std::size_t v = 0;
  if (!(in >> v)) throw IoError("malformed PPM header");
  return v;
}

RgbImage load_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string magic(2, '\0');
  in.read(magic.data(), 2);
  if (magic != "P6") throw IoError("unsupported PPM variant in " + path.string() + " (only P6)");
  RgbImage img;
  img.width = read_ppm_number(in);
  img.height = read_ppm_number(in);
  const std::size_t maxval = read_ppm_number(in);
  if (img.width == 0 || img.height == 0 || maxval == 0 || maxval > 65535)
    throw IoError("bad PPM header in " + path.string());
  in.get();  // single whitespace before the raster
  const std::size_t count = img.width * img.height * 3;
  const std::size_t bytes_per = maxval < 256 ? 1 : 2;
  std::vector<unsigned char> raw(count * bytes_per);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size()) throw IoError("truncated PPM raster in " + path.string());
  img.data.resize(count);
  const double scale = 1.0 / static_cast<double>(maxval);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t code = bytes_per == 1 ? raw[i] : (std::size_t{raw[2 * i]} << 8) | raw[2 * i + 1];
    img.data[i] = std::min(1.0, static_cast<double>(code) * scale);
  }
  return img;
}

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void png_error_handler(png_structp, png_const_charp msg) { throw IoError(std::string("PNG error: ") + msg); }
void png_warning_handler(png_structp, png_const_charp) {}

RgbImage load_png(const std::filesystem::path& path) {
  FilePtr file(std::fopen(path.string().c_str(), "rb"));
  if (!file) throw IoError("cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_handler, png_warning_handler);
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp* png;
    png_infop* info;
    ~Guard() { png_destroy_read_struct(png, info, nullptr); }
  } guard{&png, &info};
  png_init_io(png, file.get());
  png_read_info(png, info);
  const int bit_depth = png_get_bit_depth(png, info);
  const int color_type = png_get_color_type(png, info);
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
  if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (bit_depth == 16) png_set_swap(png);  // native little-endian 16-bit samples
  png_read_update_info(png, info);
  RgbImage img;
  img.width = png_get_image_width(png, info);
  img.height = png_get_image_height(png, info);
  const bool wide = png_get_bit_depth(png, info) == 16;
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  std::vector<unsigned char> raw(rowbytes * img.height);
  std::vector<png_bytep> rows(img.height);
  for (std::size_t r = 0; r < img.height; ++r) rows[r] = raw.data() + r * rowbytes;
  png_read_image(png, rows.data());
  img.data.resize(img.width * img.height * 3);
  const double maxcode = wide ? 65535.0 : 255.0;
  for (std::size_t r = 0; r < img.height; ++r)
    for (std::size_t i = 0; i < img.width * 3; ++i) {
      const unsigned char* row = rows[r];
      const double code = wide ? static_cast<double>(row[2 * i] | (row[2 * i + 1] << 8)) : row[i];
      img.data[r * img.width * 3 + i] = code / maxcode;
    }
  return img;
}

std::uint16_t quantize(double v, double maxcode) {
  return static_cast<std::uint16_t>(std::lround(std::clamp(v, 0.0, 1.0) * maxcode));
}

void save_png(const RgbImage& image, const std::filesystem::path& path, int bits) {
  FilePtr file(std::fopen(path.string().c_str(), "wb"));
  if (!file) throw IoError("cannot open " + path.string() + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_handler, png_warning_handler);
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp* png;
    png_infop* info;
    ~Guard() { png_destroy_write_struct(png, info); }
  } guard{&png, &info};
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), bits,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t bytes = bits == 16 ? 2 : 1;
  const double maxcode = bits == 16 ? 65535.0 : 255.0;
  std::vector<unsigned char> row(image.width * 3 * bytes);
  for (std::size_t r = 0; r < image.height; ++r) {
    for (std::size_t i = 0; i < image.width * 3; ++i) {
      const auto code = quantize(image.data[r * image.width * 3 + i], maxcode);
      if (bytes == 1) {
        row[i] = static_cast<unsigned char>(code);
      } else {
        row[2 * i] = static_cast<unsigned char>(code >> 8);
        row[2 * i + 1] = static_cast<unsigned char>(code & 0xff);
      }
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
}

void save_ppm(const RgbImage& image, const std::filesystem::path& path, int bits) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  const double maxcode = bits == 16 ? 65535.0 : 255.0;
  out << "P6\n" << image.width << ' ' << image.height << '\n' << static_cast<int>(maxcode) << '\n';
  for (double v : image.data) {
    const auto code = quantize(v, maxcode);
    if (bits == 16) out.put(static_cast<char>(code >> 8));
    out.put(static_cast<char>(code & 0xff));
  }
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace

RgbImage load_image(const std::filesystem::path& path) {
  const auto ext = lower_extension(path);
  if (ext == ".ppm" || ext == ".pnm") return load_ppm(path);
  if (ext == ".png") return load_png(path);
  throw IoError("unsupported image format: " + path.string());
}

void save_image(const RgbImage& image, const std::filesystem::path& path, int bits) {
  if (bits != 8 && bits != 16) throw ContractError("image bit depth must be 8 or 16");
  const auto ext = lower_extension(path);
  if (ext == ".ppm" || ext == ".pnm") return save_ppm(image, path, bits);
  if (ext == ".png") return save_png(image, path, bits);
  throw IoError("unsupported image format: " + path.string());
}

Tensor build_channels(const RgbImage& image) {
  Tensor out({image.height, image.width, 4}, 0.0);
  auto o = out.data();
  const std::size_t pixels = image.height * image.width;
  for (std::size_t px = 0; px < pixels; ++px) {
    const double r = image.data[px * 3];
    const double g = image.data[px * 3 + 1];
    const double b = image.data[px * 3 + 2];
    o[px * 4] = r;
    o[px * 4 + 1] = g;
    o[px * 4 + 2] = b;
    o[px * 4 + 3] = r + g + b;
  }
  return out;
}

Tensor add_noise(const Tensor& x, double std, std::uint64_t seed) {
  if (!(std >= 0.0)) throw ContractError("noise std must be non-negative");
  if (std == 0.0) return x;
  Tensor out = x;
  auto rng = make_rng(seed, 0);
  std::normal_distribution<double> dist(0.0, std);
  for (double& v : out.data()) v = std::max(kIntensityFloor, v + dist(rng));
  return out;
}

DatasetSplit split_dataset(std::vector<std::string> ids, std::size_t n_test, std::size_t n_val, std::uint64_t seed) {
  if (n_test + n_val >= ids.size()) throw ContractError("not enough images for the requested split");
  std::sort(ids.begin(), ids.end());
  auto rng = make_rng(seed, 0);
  std::shuffle(ids.begin(), ids.end(), rng);
  DatasetSplit split;
  split.test.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_test));
  split.val.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_test),
                   ids.begin() + static_cast<std::ptrdiff_t>(n_test + n_val));
  split.train.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_test + n_val), ids.end());
  return split;
}

void write_split_manifest(const DatasetSplit& split, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  auto line = [&](const char* name, const std::vector<std::string>& ids) {
    out << name << ':';
    for (const auto& id : ids) out << ' ' << id;
    out << '\n';
  };
  line("train", split.train);
  line("val", split.val);
  line("test", split.test);
}

DatasetSplit read_split_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open split manifest " + path.string());
  DatasetSplit split;
  std::string line;
  int line_no = 0;
  const char* expected[] = {"train:", "val:", "test:"};
  std::vector<std::string>* targets[] = {&split.train, &split.val, &split.test};
  for (int k = 0; k < 3; ++k) {
    ++line_no;
    if (!std::getline(in, line)) throw ParseError("split manifest needs three lines", line_no);
    std::istringstream tokens(line);
    std::string head;
    if (!(tokens >> head) || head != expected[k]) throw ParseError(std::string("expected '") + expected[k] + "'", line_no);
    std::string id;
    while (tokens >> id) targets[k]->push_back(id);
  }
  return split;
}

std::vector<std::string> list_images(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("dataset directory not found: " + dir.string());
  std::vector<std::string> ids;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const auto ext = lower_extension(entry.path());
    if (ext == ".png" || ext == ".ppm" || ext == ".pnm") ids.push_back(entry.path().filename().string());
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

PatchBatch sample_patch_pairs(const std::vector<RgbImage>& images, int period, std::size_t batch, std::uint64_t seed,
                              std::uint64_t stream, double noise_std) {
  if (images.empty()) throw ContractError("no images to sample from");
  if (batch == 0) throw ContractError("batch must be at least 1");
  if (period < 1) throw ContractError("period must be positive");
  const auto p = static_cast<std::size_t>(period);
  for (const auto& img : images)
    if (img.height < 3 * p || img.width < 3 * p) throw DimensionError("image too small for 3P x 3P patches");

  auto rng = make_rng(seed, stream);
  std::normal_distribution<double> noise(0.0, noise_std > 0.0 ? noise_std : 1.0);
  const std::size_t side = 3 * p;
  PatchBatch out;
  out.x = Tensor({batch, side, side, 4}, 0.0);
  out.y = Tensor({batch, p, p, 3}, 0.0);
  auto xv = out.x.data();
  auto yv = out.y.data();
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t idx = std::uniform_int_distribution<std::size_t>(0, images.size() - 1)(rng);
    const auto& img = images[idx];
    // y tile rows [P*(r+1), P*(r+2)); the full 3P context must fit.
    const std::size_t rows = img.height / p - 2;
    const std::size_t cols = img.width / p - 2;
    const std::size_t top = p * (1 + std::uniform_int_distribution<std::size_t>(0, rows - 1)(rng));
    const std::size_t left = p * (1 + std::uniform_int_distribution<std::size_t>(0, cols - 1)(rng));
    out.image_index.push_back(idx);
    out.top.push_back(top);
    out.left.push_back(left);
    for (std::size_t i = 0; i < side; ++i)
      for (std::size_t j = 0; j < side; ++j) {
        const std::size_t y = top - p + i;
        const std::size_t x = left - p + j;
        double* dst = xv.data() + ((b * side + i) * side + j) * 4;
        const double r = img.at(y, x, 0), g = img.at(y, x, 1), bl = img.at(y, x, 2);
        dst[0] = r;
        dst[1] = g;
        dst[2] = bl;
        dst[3] = r + g + bl;
        for (int c = 0; c < 4; ++c) {
          if (noise_std > 0.0) dst[c] += noise(rng);
          dst[c] = std::max(kIntensityFloor, dst[c]);
        }
      }
    for (std::size_t i = 0; i < p; ++i)
      for (std::size_t j = 0; j < p; ++j)
        for (std::size_t c = 0; c < 3; ++c) yv[((b * p + i) * p + j) * 3 + c] = img.at(top + i, left + j, c);
  }
  return out;
}

RgbImage synthetic_image(std::size_t height, std::size_t width, std::uint64_t seed) {
  auto rng = make_rng(seed, 0x5eed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  RgbImage img;
  img.height = height;
  img.width = width;
  img.data.assign(height * width * 3, 0.0);
  std::vector<bool> covered(height * width, false);
  std::size_t remaining = height * width;

  const double rmin = 4.0;
  const double rmax = 0.3 * static_cast<double>(std::min(height, width));
  // Leaves are placed front to back; a pixel keeps the first leaf covering it.
  for (int leaf = 0; leaf < 4000 && remaining > 0; ++leaf) {
    // Radius density ~ r^-3 on [rmin, rmax] (scale-invariant dead leaves).
    const double u = unit(rng);
    const double radius = 1.0 / std::sqrt((1.0 - u) / (rmin * rmin) + u / (rmax * rmax));
    const double cy = unit(rng) * static_cast<double>(height);
    const double cx = unit(rng) * static_cast<double>(width);
    const double luminance = 0.05 + 0.75 * std::pow(unit(rng), 1.5);
    // Mostly desaturated hues: colour channels stay strongly correlated.
    double tint[3];
    for (double& t : tint) t = std::exp(0.15 * normal(rng));
    const double mean_tint = (tint[0] + tint[1] + tint[2]) / 3.0;
    const double gy = 0.3 * normal(rng) / radius;
    const double gx = 0.3 * normal(rng) / radius;
    const double freq = 0.3 + 0.9 * unit(rng);
    const double angle = unit(rng) * std::numbers::pi;
    const double texture = 0.06 * unit(rng);
    const auto y0 = static_cast<std::ptrdiff_t>(std::floor(cy - radius));
    const auto y1 = static_cast<std::ptrdiff_t>(std::ceil(cy + radius));
    const auto x0 = static_cast<std::ptrdiff_t>(std::floor(cx - radius));
    const auto x1 = static_cast<std::ptrdiff_t>(std::ceil(cx + radius));
    for (auto y = std::max<std::ptrdiff_t>(0, y0); y <= std::min<std::ptrdiff_t>(y1, static_cast<std::ptrdiff_t>(height) - 1); ++y)
      for (auto x = std::max<std::ptrdiff_t>(0, x0); x <= std::min<std::ptrdiff_t>(x1, static_cast<std::ptrdiff_t>(width) - 1); ++x) {
        const double dy = static_cast<double>(y) + 0.5 - cy;
        const double dx = static_cast<double>(x) + 0.5 - cx;
        if (dy * dy + dx * dx > radius * radius) continue;
        const auto px = static_cast<std::size_t>(y) * width + static_cast<std::size_t>(x);
        if (covered[px]) continue;
        covered[px] = true;
        --remaining;
        const double stripes = std::sin(freq * (dx * std::cos(angle) + dy * std::sin(angle)));
        const double shade = luminance * (1.0 + gy * dy + gx * dx) * (1.0 + texture * stripes);
        for (std::size_t c = 0; c < 3; ++c)
          img.data[px * 3 + c] = std::clamp(shade * tint[c] / mean_tint, 0.0, 1.0);
      }
  }
  for (std::size_t px = 0; px < height * width; ++px)
    if (!covered[px])
      for (std::size_t c = 0; c < 3; ++c) img.data[px * 3 + c] = 0.3;

  // Separable [1 4 6 4 1]/16 blur as a stand-in for an optical anti-aliasing filter.
  constexpr double taps[5] = {1.0 / 16, 4.0 / 16, 6.0 / 16, 4.0 / 16, 1.0 / 16};
  auto clamp_index = [](std::ptrdiff_t i, std::size_t n) {
    return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(i, 0, static_cast<std::ptrdiff_t>(n) - 1));
  };
  std::vector<double> tmp(img.data.size());
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int k = -2; k <= 2; ++k)
          acc += taps[k + 2] * img.data[(y * width + clamp_index(static_cast<std::ptrdiff_t>(x) + k, width)) * 3 + c];
        tmp[(y * width + x) * 3 + c] = acc;
      }
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int k = -2; k <= 2; ++k)
          acc += taps[k + 2] * tmp[(clamp_index(static_cast<std::ptrdiff_t>(y) + k, height) * width + x) * 3 + c];
        img.data[(y * width + x) * 3 + c] = acc;
      }
  return img;
}

RgbImage downsample2(const RgbImage& image) {
  RgbImage out;
  out.height = image.height / 2;
  out.width = image.width / 2;
  out.data.assign(out.height * out.width * 3, 0.0);
  for (std::size_t y = 0; y < out.height; ++y)
    for (std::size_t x = 0; x < out.width; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        out.data[(y * out.width + x) * 3 + c] =
            0.25 * (image.at(2 * y, 2 * x, c) + image.at(2 * y, 2 * x + 1, c) + image.at(2 * y + 1, 2 * x, c) +
                    image.at(2 * y + 1, 2 * x + 1, c));
  return out;
}

}  // namespace cfa
