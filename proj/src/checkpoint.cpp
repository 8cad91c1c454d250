// Binary checkpoint container:
//   "CFACKPT\0" | u32 version | u64 payload length | payload | u32 CRC-32(payload)
// All integers and doubles are stored little-endian as raw bit patterns.

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>

#include "cfa/errors.hpp"
#include "cfa/trainer.hpp"

namespace cfa {

namespace {

constexpr char kMagic[8] = {'C', 'F', 'A', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

class Writer {
 public:
  template <typename T>
  void pod(T v) {
    const auto* p = reinterpret_cast<const unsigned char*>(&v);
    bytes_.insert(bytes_.end(), p, p + sizeof(T));
  }
  void u64(std::uint64_t v) { pod(v); }
  void i64(std::int64_t v) { pod(v); }
  void f64(double v) { pod(v); }
  void str(const std::string& s) {
    u64(s.size());
    bytes_.insert(bytes_.end(), s.begin(), s.end());
  }
  void tensor(const Tensor& t) {
    u64(t.rank());
    for (auto d : t.shape()) u64(d);
    for (double v : t.data()) f64(v);
  }
  void pattern(const HardPattern& p) {
    i64(p.period());
    for (int c : p.channels()) pod(static_cast<std::uint8_t>(c));
  }
  std::vector<unsigned char> take() { return std::move(bytes_); }

 private:
  std::vector<unsigned char> bytes_;
};

class Reader {
 public:
  explicit Reader(std::span<const unsigned char> bytes) : bytes_(bytes) {}
  template <typename T>
  T pod() {
    if (pos_ + sizeof(T) > bytes_.size()) throw IoError("checkpoint payload truncated");
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::uint64_t u64() { return pod<std::uint64_t>(); }
  std::int64_t i64() { return pod<std::int64_t>(); }
  double f64() { return pod<double>(); }
  std::size_t count(std::size_t limit = 1u << 30) {
    const auto n = u64();
    if (n > limit) throw IoError("checkpoint field length out of range");
    return static_cast<std::size_t>(n);
  }
  std::string str() {
    const auto n = count();
    if (pos_ + n > bytes_.size()) throw IoError("checkpoint payload truncated");
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  Tensor tensor() {
    const auto rank = count(8);
    Shape shape(rank);
    for (auto& d : shape) d = count();
    std::vector<double> data(shape_size(shape));
    for (double& v : data) v = f64();
    return Tensor(std::move(shape), std::move(data));
  }
  HardPattern pattern() {
    const auto period = static_cast<int>(i64());
    if (period < 1 || period > 4096) throw IoError("checkpoint pattern period out of range");
    std::vector<int> grid(static_cast<std::size_t>(period * period));
    for (int& c : grid) c = pod<std::uint8_t>();
    return {period, std::move(grid)};
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::span<const unsigned char> bytes_;
  std::size_t pos_ = 0;
};

std::uint32_t checksum(std::span<const unsigned char> bytes) {
  return static_cast<std::uint32_t>(crc32(0L, bytes.data(), static_cast<uInt>(bytes.size())));
}

}  // namespace

std::vector<unsigned char> serialize_checkpoint(const TrainState& state) {
  Writer w;
  w.pod(static_cast<std::uint8_t>(state.mode));
  w.i64(state.iteration);
  w.u64(state.seed);
  w.str(state.config_text);
  const auto& shape = state.params.shape;
  w.i64(shape.period);
  w.i64(shape.proposals);
  w.i64(shape.features);
  w.pod(static_cast<std::uint8_t>(shape.normalize_gates));
  for (const Tensor* t : state.params.tensors()) w.tensor(*t);
  w.pod(static_cast<std::uint8_t>(state.sensor.has_value()));
  if (state.sensor) {
    w.i64(state.sensor->period());
    w.i64(state.sensor->channels());
    w.tensor(state.sensor->logits());
  }
  w.pod(static_cast<std::uint8_t>(state.fixed.has_value()));
  if (state.fixed) w.pattern(*state.fixed);
  w.u64(state.velocity.size());
  for (const auto& v : state.velocity) w.tensor(v);
  w.f64(state.loss_sum);
  w.i64(state.loss_count);
  w.u64(state.log.entries.size());
  for (const auto& e : state.log.entries) {
    w.i64(e.iteration);
    w.f64(e.train_loss);
    w.f64(e.val_loss);
    w.f64(e.mean_entropy);
    w.f64(e.lr);
    w.pattern(e.pattern);
  }
  w.u64(state.log.lr_changes.size());
  for (const auto& [it, lr] : state.log.lr_changes) {
    w.i64(it);
    w.f64(lr);
  }
  const auto payload = w.take();

  Writer file;
  for (char c : kMagic) file.pod(c);
  file.pod(kVersion);
  file.u64(payload.size());
  auto out = file.take();
  out.insert(out.end(), payload.begin(), payload.end());
  const auto crc = checksum(payload);
  const auto* p = reinterpret_cast<const unsigned char*>(&crc);
  out.insert(out.end(), p, p + sizeof(crc));
  return out;
}

TrainState deserialize_checkpoint(std::span<const unsigned char> bytes) {
  constexpr std::size_t header = sizeof(kMagic) + sizeof(std::uint32_t) + sizeof(std::uint64_t);
  if (bytes.size() < header + sizeof(std::uint32_t)) throw IoError("checkpoint file too short");
  if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) throw IoError("not a checkpoint file");
  Reader head(bytes.subspan(sizeof(kMagic), header - sizeof(kMagic)));
  const auto version = head.pod<std::uint32_t>();
  if (version != kVersion)
    throw IoError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                  std::to_string(kVersion) + ")");
  const auto length = head.u64();
  if (length != bytes.size() - header - sizeof(std::uint32_t)) throw IoError("checkpoint length field mismatch");
  const auto payload = bytes.subspan(header, static_cast<std::size_t>(length));
  std::uint32_t stored = 0;
  std::memcpy(&stored, bytes.data() + header + length, sizeof(stored));
  if (stored != checksum(payload)) throw IoError("checkpoint checksum mismatch (file is corrupt)");

  Reader r(payload);
  TrainState state;
  const auto mode = r.pod<std::uint8_t>();
  if (mode > 1) throw IoError("checkpoint has unknown training mode");
  state.mode = static_cast<TrainMode>(mode);
  state.iteration = r.i64();
  state.seed = r.u64();
  state.config_text = r.str();
  state.params.shape.period = static_cast<int>(r.i64());
  state.params.shape.proposals = static_cast<int>(r.i64());
  state.params.shape.features = static_cast<int>(r.i64());
  state.params.shape.normalize_gates = r.pod<std::uint8_t>() != 0;
  for (Tensor* t : state.params.tensors()) *t = r.tensor();
  if (r.pod<std::uint8_t>()) {
    const auto period = static_cast<int>(r.i64());
    const auto channels = static_cast<int>(r.i64());
    state.sensor = SensorPattern(period, channels, r.tensor());
  }
  if (r.pod<std::uint8_t>()) state.fixed = r.pattern();
  state.velocity.resize(r.count());
  for (auto& v : state.velocity) v = r.tensor();
  state.loss_sum = r.f64();
  state.loss_count = r.i64();
  state.log.entries.resize(r.count());
  for (auto& e : state.log.entries) {
    e.iteration = r.i64();
    e.train_loss = r.f64();
    e.val_loss = r.f64();
    e.mean_entropy = r.f64();
    e.lr = r.f64();
    e.pattern = r.pattern();
  }
  state.log.lr_changes.resize(r.count());
  for (auto& [it, lr] : state.log.lr_changes) {
    it = r.i64();
    lr = r.f64();
  }
  if (!r.done()) throw IoError("checkpoint has trailing bytes");
  return state;
}

void save_checkpoint(const TrainState& state, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(state);
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

TrainState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace cfa
