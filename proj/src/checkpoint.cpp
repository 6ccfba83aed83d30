#include "milseg/checkpoint.hpp"

#include "milseg/errors.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

namespace milseg {
namespace {

constexpr char kMagic[8] = {'M', 'I', 'L', 'S', 'E', 'G', '0', '1'};

class Writer {
 public:
  template <typename T>
  void put(T v) {
    static_assert(std::is_integral_v<T>);
    for (std::size_t i = 0; i < sizeof(T); ++i) bytes.push_back(static_cast<unsigned char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
  }
  void put_f64(double v) { put(std::bit_cast<std::uint64_t>(v)); }
  std::vector<unsigned char> bytes;
};

class Reader {
 public:
  explicit Reader(const std::vector<unsigned char>& b) : bytes_(b) {}
  template <typename T>
  T get() {
    if (at_ + sizeof(T) > bytes_.size()) throw IoError("checkpoint truncated at byte " + std::to_string(at_));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(bytes_[at_ + i]) << (8 * i);
    at_ += sizeof(T);
    return static_cast<T>(v);
  }
  double get_f64() { return std::bit_cast<double>(get<std::uint64_t>()); }
  bool done() const { return at_ == bytes_.size(); }
  std::size_t at() const { return at_; }

 private:
  const std::vector<unsigned char>& bytes_;
  std::size_t at_ = 0;
};

}  // namespace

std::vector<unsigned char> encode_checkpoint(const NetworkSpec& spec, const NetworkParams& params) {
  spec.validate();
  if (static_cast<Index>(params.size()) != spec.conv_count()) throw ShapeError("checkpoint: params do not match spec");
  Writer w;
  w.bytes.assign(std::begin(kMagic), std::end(kMagic));
  w.put(static_cast<std::uint32_t>(spec.class_count));
  w.put(static_cast<std::uint32_t>(spec.input_channels));
  w.put_f64(spec.dropout_rate);
  w.put(static_cast<std::uint64_t>(spec.seed));
  w.put(static_cast<std::uint32_t>(spec.layers.size()));
  for (const auto& l : spec.layers) {
    w.put(static_cast<std::uint8_t>(l.kind));
    w.put(static_cast<std::uint8_t>(l.frozen));
    w.put(static_cast<std::uint8_t>(l.head));
    w.put(std::uint8_t{0});
    w.put(static_cast<std::uint32_t>(l.channels));
    w.put(static_cast<std::uint32_t>(l.kernel));
  }
  for (const auto& p : params) {
    for (Index i = 0; i < p.weights.size(); ++i) w.put_f64(p.weights[i]);
    for (Index i = 0; i < p.bias.size(); ++i) w.put_f64(p.bias[i]);
  }
  return std::move(w.bytes);
}

Checkpoint decode_checkpoint(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw IoError("not a checkpoint (bad magic)");
  }
  Reader r(bytes);
  for (std::size_t i = 0; i < sizeof(kMagic); ++i) r.get<std::uint8_t>();
  Checkpoint ck;
  ck.spec.class_count = r.get<std::uint32_t>();
  ck.spec.input_channels = r.get<std::uint32_t>();
  ck.spec.dropout_rate = r.get_f64();
  ck.spec.seed = r.get<std::uint64_t>();
  const auto n = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n; ++i) {
    LayerSpec l;
    const auto kind = r.get<std::uint8_t>();
    if (kind > 1) throw IoError("checkpoint: unknown layer kind " + std::to_string(kind));
    l.kind = static_cast<LayerKind>(kind);
    l.frozen = r.get<std::uint8_t>() != 0;
    l.head = r.get<std::uint8_t>() != 0;
    r.get<std::uint8_t>();
    l.channels = r.get<std::uint32_t>();
    l.kernel = r.get<std::uint32_t>();
    ck.spec.layers.push_back(l);
  }
  try {
    ck.spec.validate();
  } catch (const std::invalid_argument& e) {
    throw IoError(std::string("checkpoint: invalid layer table: ") + e.what());
  }
  Index channels = ck.spec.input_channels;
  for (const auto& l : ck.spec.layers) {
    if (l.kind != LayerKind::Conv) continue;
    Tensord w({l.channels, channels, l.kernel, l.kernel});
    Tensord b({l.channels});
    for (Index i = 0; i < w.size(); ++i) w[i] = r.get_f64();
    for (Index i = 0; i < b.size(); ++i) b[i] = r.get_f64();
    ck.params.emplace_back(std::move(w), std::move(b), l.frozen);
    channels = l.channels;
  }
  if (!r.done()) throw IoError("checkpoint: trailing bytes after parameters");
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const NetworkSpec& spec, const NetworkParams& params) {
  const auto bytes = encode_checkpoint(spec, params);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace milseg
