#include "milseg/image_io.hpp"

#include "milseg/errors.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

namespace milseg {
namespace {

struct NetpbmHeader {
  int width = 0;
  int height = 0;
  int maxval = 0;
};

int read_header_int(std::istream& in, const std::filesystem::path& path) {
  int c = in.peek();
  while (in && (std::isspace(c) || c == '#')) {
    if (c == '#') {
      std::string skip;
      std::getline(in, skip);
    } else {
      in.get();
    }
    c = in.peek();
  }
  int v = -1;
  if (!(in >> v) || v <= 0) throw IoError(path.string() + ": malformed netpbm header");
  return v;
}

NetpbmHeader read_header(std::istream& in, const char* magic, const std::filesystem::path& path) {
  char m[2] = {0, 0};
  in.read(m, 2);
  if (!in || m[0] != magic[0] || m[1] != magic[1]) {
    throw IoError(path.string() + ": expected " + std::string(magic, 2) + " netpbm file");
  }
  NetpbmHeader h;
  h.width = read_header_int(in, path);
  h.height = read_header_int(in, path);
  h.maxval = read_header_int(in, path);
  if (h.maxval > 255) throw IoError(path.string() + ": only 8-bit netpbm files are supported");
  in.get();  // single whitespace before the raster
  return h;
}

std::vector<unsigned char> read_raster(std::istream& in, std::size_t n, const std::filesystem::path& path) {
  std::vector<unsigned char> buf(n);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) throw IoError(path.string() + ": truncated raster");
  return buf;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

unsigned char to_byte(double v) { return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

}  // namespace

Tensord read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const auto h = read_header(in, "P6", path);
  const auto buf = read_raster(in, static_cast<std::size_t>(h.width) * h.height * 3, path);
  Tensord img({3, h.height, h.width});
  const double maxval = h.maxval;
  for (Index y = 0; y < h.height; ++y) {
    for (Index x = 0; x < h.width; ++x) {
      for (Index c = 0; c < 3; ++c) img(c, y, x) = buf[static_cast<std::size_t>((y * h.width + x) * 3 + c)] / maxval;
    }
  }
  return img;
}

void write_ppm(const std::filesystem::path& path, const Tensord& image) {
  require_rank(image.shape(), 3, "write_ppm");
  if (image.dim(0) != 3) throw ShapeError("write_ppm: expected 3 channels");
  const Index height = image.dim(1), width = image.dim(2);
  std::vector<unsigned char> buf(static_cast<std::size_t>(height * width * 3));
  for (Index y = 0; y < height; ++y) {
    for (Index x = 0; x < width; ++x) {
      for (Index c = 0; c < 3; ++c) buf[static_cast<std::size_t>((y * width + x) * 3 + c)] = to_byte(image(c, y, x));
    }
  }
  auto out = open_out(path);
  out << "P6\n" << width << ' ' << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("short write to " + path.string());
}

LabelMask read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const auto h = read_header(in, "P5", path);
  const auto buf = read_raster(in, static_cast<std::size_t>(h.width) * h.height, path);
  LabelMask m(h.height, h.width);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = buf[static_cast<std::size_t>(i)];
  return m;
}

void write_pgm(const std::filesystem::path& path, const LabelMask& mask) {
  std::vector<unsigned char> buf(static_cast<std::size_t>(mask.size()));
  for (Index i = 0; i < mask.size(); ++i) {
    const auto v = mask.data()[i];
    if (v < 0 || v > 255) throw IoError("write_pgm: value " + std::to_string(v) + " does not fit in 8 bits");
    buf[static_cast<std::size_t>(i)] = static_cast<unsigned char>(v);
  }
  auto out = open_out(path);
  out << "P5\n" << mask.cols() << ' ' << mask.rows() << "\n255\n";
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("short write to " + path.string());
}

Tensord quantize_8bit(const Tensord& image) {
  Tensord q(image.shape());
  for (Index i = 0; i < q.size(); ++i) q[i] = to_byte(image[i]) / 255.0;
  return q;
}

}  // namespace milseg
