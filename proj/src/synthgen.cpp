#include "milseg/synthgen.hpp"

#include "milseg/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

namespace milseg {
namespace {

constexpr double kMinForeground = 0.01;
constexpr double kMaxForeground = 0.6;

double bilinear(const Tensord& img, Index c, double y, double x) {
  const Index h = img.dim(1), w = img.dim(2);
  const Index y0 = std::clamp<Index>(static_cast<Index>(std::floor(y)), 0, h - 1);
  const Index x0 = std::clamp<Index>(static_cast<Index>(std::floor(x)), 0, w - 1);
  const Index y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
  const double fy = std::clamp(y - static_cast<double>(y0), 0.0, 1.0);
  const double fx = std::clamp(x - static_cast<double>(x0), 0.0, 1.0);
  return (1 - fy) * ((1 - fx) * img(c, y0, x0) + fx * img(c, y0, x1)) +
         fy * ((1 - fx) * img(c, y1, x0) + fx * img(c, y1, x1));
}

// Regular polygon (n >= 3) or disk (n == 0) membership of pixel (x, y).
struct Shape2D {
  int sides = 0;
  double cx = 0, cy = 0, radius = 0, phase = 0;

  bool contains(double x, double y) const {
    const double dx = x - cx, dy = y - cy;
    if (sides == 0) return dx * dx + dy * dy <= radius * radius;
    // inside iff the projection on every edge normal is within the apothem
    const double apothem = radius * std::cos(std::numbers::pi / sides);
    for (int i = 0; i < sides; ++i) {
      const double a = phase + (2.0 * i + 1.0) * std::numbers::pi / sides;
      if (dx * std::cos(a) + dy * std::sin(a) > apothem) return false;
    }
    return true;
  }
};

int sides_for_label(int label) {
  switch (label) {
    case 1:
      return 0;
    case 2:
      return 4;
    case 3:
      return 3;
    default:
      return label + 1;
  }
}

}  // namespace

void JitterSpec::validate() const {
  const bool finite = std::isfinite(flip_probability) && std::isfinite(max_rotation_deg) && std::isfinite(scale_min) &&
                      std::isfinite(scale_max) && std::isfinite(brightness) && std::isfinite(contrast_min) &&
                      std::isfinite(contrast_max);
  if (!finite) throw std::invalid_argument("jitter ranges must be finite");
  if (flip_probability < 0 || flip_probability > 1) throw std::invalid_argument("flip probability must lie in [0, 1]");
  if (max_rotation_deg < 0) throw std::invalid_argument("max rotation must be nonnegative");
  if (!(scale_min > 0 && scale_min <= scale_max)) throw std::invalid_argument("scale range must satisfy 0 < min <= max");
  if (brightness < 0) throw std::invalid_argument("brightness range must be nonnegative");
  if (!(contrast_min > 0 && contrast_min <= contrast_max)) {
    throw std::invalid_argument("contrast range must satisfy 0 < min <= max");
  }
}

JitterParams draw_jitter(const JitterSpec& spec, RngStream& rng) {
  spec.validate();
  JitterParams p;
  p.flip = rng.bernoulli(spec.flip_probability);
  p.rotation_deg = rng.uniform(-spec.max_rotation_deg, spec.max_rotation_deg);
  p.scale = rng.uniform(spec.scale_min, spec.scale_max);
  p.brightness = rng.uniform(-spec.brightness, spec.brightness);
  p.contrast = rng.uniform(spec.contrast_min, spec.contrast_max);
  return p;
}

std::string shape_name(int label) {
  switch (label) {
    case 0:
      return "background";
    case 1:
      return "disk";
    case 2:
      return "square";
    case 3:
      return "triangle";
    default:
      return std::to_string(label + 1) + "-gon";
  }
}

Tensord background_texture(Index height, Index width, RngStream& rng) {
  const Index grid = 3 + static_cast<Index>(rng.below(4));
  Tensord coarse({3, grid, grid});
  for (Index i = 0; i < coarse.size(); ++i) coarse[i] = rng.uniform(0.15, 0.85);
  Tensord tex = resize_bilinear(coarse, height, width);

  const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
  Eigen::Vector3d amplitude;
  for (int c = 0; c < 3; ++c) amplitude[c] = rng.uniform(-0.15, 0.15);
  const double gx = std::cos(angle) / static_cast<double>(width), gy = std::sin(angle) / static_cast<double>(height);
  for (Index c = 0; c < 3; ++c) {
    for (Index y = 0; y < height; ++y) {
      for (Index x = 0; x < width; ++x) {
        const double ramp = gx * (x - width / 2.0) + gy * (y - height / 2.0);
        tex(c, y, x) = std::clamp(tex(c, y, x) + amplitude[c] * ramp + rng.uniform(-0.04, 0.04), 0.0, 1.0);
      }
    }
  }
  return tex;
}

Sample generate_sample(int label, Index image_size, std::uint64_t seed, std::uint64_t index) {
  RngStream rng(seed, "data", index);
  Sample s;
  s.label = label;
  s.image = background_texture(image_size, image_size, rng);
  s.gt_mask = LabelMask::Zero(image_size, image_size);
  if (label == 0) {
    s.image = quantize_8bit(s.image);
    return s;
  }

  const double size = static_cast<double>(image_size);
  const double margin = size / 8.0;
  const Index total = image_size * image_size;
  Shape2D shape;
  shape.sides = sides_for_label(label);
  LabelMask mask;
  for (int attempt = 0;; ++attempt) {
    if (attempt == 100) throw std::logic_error("could not place a shape within the foreground bounds");
    shape.radius = rng.uniform(0.11 * size, 0.25 * size);
    shape.cx = rng.uniform(margin + shape.radius, size - 1 - margin - shape.radius);
    shape.cy = rng.uniform(margin + shape.radius, size - 1 - margin - shape.radius);
    shape.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    mask = LabelMask::Zero(image_size, image_size);
    for (Index y = 0; y < image_size; ++y) {
      for (Index x = 0; x < image_size; ++x) mask(y, x) = shape.contains(x, y) ? label : 0;
    }
    const double fraction = static_cast<double>((mask.array() != 0).count()) / static_cast<double>(total);
    if (fraction >= kMinForeground && fraction <= kMaxForeground) break;
  }

  // pick a colour that stands out from the background under the shape
  Eigen::Vector3d under = Eigen::Vector3d::Zero();
  const auto inside = static_cast<double>((mask.array() != 0).count());
  for (Index c = 0; c < 3; ++c) {
    under[c] = (s.image.plane(c).array() * (mask.array() != 0).cast<double>()).sum() / inside;
  }
  Eigen::Vector3d colour, best = Eigen::Vector3d::Zero();
  double best_distance = -1.0;
  for (int attempt = 0; attempt < 100; ++attempt) {
    for (int c = 0; c < 3; ++c) colour[c] = rng.uniform();
    const double d = (colour - under).norm();
    if (d > best_distance) {
      best_distance = d;
      best = colour;
    }
    if (d >= 0.35) break;
  }
  for (Index y = 0; y < image_size; ++y) {
    for (Index x = 0; x < image_size; ++x) {
      if (mask(y, x) == 0) continue;
      for (Index c = 0; c < 3; ++c) s.image(c, y, x) = std::clamp(best[c] + rng.uniform(-0.04, 0.04), 0.0, 1.0);
    }
  }
  s.image = quantize_8bit(s.image);
  s.gt_mask = std::move(mask);
  return s;
}

std::vector<Sample> generate_dataset(Index class_count, Index per_class, Index image_size, std::uint64_t seed) {
  if (class_count < 2) throw std::invalid_argument("class_count must be at least 2 (background + one shape)");
  if (per_class < 0) throw std::invalid_argument("per_class must be nonnegative");
  if (image_size < 16) throw std::invalid_argument("image_size must be at least 16 to fit the smallest shape");
  std::vector<Sample> samples;
  samples.reserve(static_cast<std::size_t>(class_count * per_class));
  for (Index i = 0; i < class_count * per_class; ++i) {
    samples.push_back(generate_sample(static_cast<int>(i % class_count), image_size, seed, static_cast<std::uint64_t>(i)));
  }
  return samples;
}

namespace {

bool is_identity(const JitterParams& p) {
  return !p.flip && p.rotation_deg == 0.0 && p.scale == 1.0 && p.brightness == 0.0 && p.contrast == 1.0;
}

// Returns the transformed image and optionally mask.
void transform(const Tensord& image, const LabelMask* mask, const JitterParams& p, RngStream& rng, Tensord& out_image,
               LabelMask* out_mask) {
  const Index h = image.dim(1), w = image.dim(2);
  out_image = image;
  if (out_mask) *out_mask = *mask;

  if (p.flip) {
    for (Index c = 0; c < image.dim(0); ++c) out_image.plane(c) = out_image.plane(c).rowwise().reverse().eval();
    if (out_mask) *out_mask = out_mask->rowwise().reverse().eval();
  }

  if (p.rotation_deg != 0.0 || p.scale != 1.0) {
    const Tensord src = out_image;
    const LabelMask src_mask = out_mask ? *out_mask : LabelMask();
    // exact trigonometry on quarter turns keeps those rotations lossless
    double cs, sn;
    const double quarter = p.rotation_deg / 90.0;
    if (quarter == std::round(quarter)) {
      const int q = ((static_cast<int>(quarter) % 4) + 4) % 4;
      const int cos_tab[4] = {1, 0, -1, 0}, sin_tab[4] = {0, 1, 0, -1};
      cs = cos_tab[q];
      sn = sin_tab[q];
    } else {
      const double rad = p.rotation_deg * std::numbers::pi / 180.0;
      cs = std::cos(rad);
      sn = std::sin(rad);
    }
    const double cx = (w - 1) / 2.0, cy = (h - 1) / 2.0;
    const Tensord fill = background_texture(h, w, rng);
    for (Index y = 0; y < h; ++y) {
      for (Index x = 0; x < w; ++x) {
        // inverse map: rotate by -angle and divide by scale
        const double dx = x - cx, dy = y - cy;
        const double u = cx + (cs * dx + sn * dy) / p.scale;
        const double v = cy + (-sn * dx + cs * dy) / p.scale;
        const bool in_frame = u > -0.5 && u < w - 0.5 && v > -0.5 && v < h - 0.5;
        for (Index c = 0; c < src.dim(0); ++c) out_image(c, y, x) = in_frame ? bilinear(src, c, v, u) : fill(c, y, x);
        if (out_mask) {
          (*out_mask)(y, x) = in_frame ? src_mask(static_cast<Index>(std::lround(v)), static_cast<Index>(std::lround(u))) : 0;
        }
      }
    }
  }

  if (p.brightness != 0.0 || p.contrast != 1.0) {
    out_image.values() = ((out_image.values().array() - 0.5) * p.contrast + 0.5 + p.brightness).cwiseMax(0.0).cwiseMin(1.0).matrix();
  }
}

}  // namespace

Sample apply_jitter(const Sample& sample, const JitterParams& params, RngStream& rng) {
  if (is_identity(params)) return sample;
  Sample out;
  out.label = sample.label;
  transform(sample.image, &sample.gt_mask, params, rng, out.image, &out.gt_mask);
  return out;
}

Sample apply_jitter(const Sample& sample, const JitterSpec& spec, RngStream& rng) {
  return apply_jitter(sample, draw_jitter(spec, rng), rng);
}

LabeledImage apply_jitter(const LabeledImage& sample, const JitterSpec& spec, RngStream& rng) {
  const auto p = draw_jitter(spec, rng);
  if (is_identity(p)) return sample;
  LabeledImage out;
  out.label = sample.label;
  transform(sample.image, nullptr, p, rng, out.image, nullptr);
  return out;
}

Tensord normalize_image(const Tensord& image) {
  require_rank(image.shape(), 3, "normalize_image");
  Tensord out(image.shape());
  const Index n = image.dim(1) * image.dim(2);
  for (Index c = 0; c < image.dim(0); ++c) {
    const auto plane = image.values().segment(c * n, n).array();
    const double mean = plane.mean();
    const double var = (plane - mean).square().mean();
    out.values().segment(c * n, n) = ((plane - mean) / std::sqrt(std::max(var, 1e-8))).matrix();
  }
  return out;
}

Tensord resize_bilinear(const Tensord& image, Index height, Index width) {
  require_rank(image.shape(), 3, "resize_bilinear");
  Tensord out({image.dim(0), height, width});
  // align corners so coarse grids interpolate smoothly end to end
  const double sy = height > 1 ? static_cast<double>(image.dim(1) - 1) / static_cast<double>(height - 1) : 0.0;
  const double sx = width > 1 ? static_cast<double>(image.dim(2) - 1) / static_cast<double>(width - 1) : 0.0;
  for (Index c = 0; c < image.dim(0); ++c) {
    for (Index y = 0; y < height; ++y) {
      for (Index x = 0; x < width; ++x) out(c, y, x) = bilinear(image, c, y * sy, x * sx);
    }
  }
  return out;
}

Tensord training_crop(const Tensord& image, Index size) {
  require_rank(image.shape(), 3, "training_crop");
  if (size <= 0) throw std::invalid_argument("crop size must be positive");
  Tensord src = image;
  const Index h = image.dim(1), w = image.dim(2);
  if (std::min(h, w) < size) {
    const double f = static_cast<double>(size) / static_cast<double>(std::min(h, w));
    src = resize_bilinear(image, std::max(size, static_cast<Index>(std::lround(h * f))),
                          std::max(size, static_cast<Index>(std::lround(w * f))));
  }
  const Index y0 = (src.dim(1) - size) / 2, x0 = (src.dim(2) - size) / 2;
  Tensord out({src.dim(0), size, size});
  for (Index c = 0; c < src.dim(0); ++c) out.plane(c) = src.plane(c).block(y0, x0, size, size);
  return out;
}

// ---- dataset directories ----------------------------------------------------

std::string sample_stem(std::size_t index) {
  std::ostringstream os;
  os << std::setw(5) << std::setfill('0') << index;
  return os.str();
}

void write_dataset(const std::filesystem::path& dir, const std::vector<Sample>& samples, std::uint64_t seed,
                   Index class_count) {
  std::error_code ec;
  std::filesystem::create_directories(dir / "images", ec);
  std::filesystem::create_directories(dir / "masks", ec);
  if (ec) throw IoError("cannot create dataset directory " + dir.string() + ": " + ec.message());
  std::ofstream labels(dir / "labels.csv", std::ios::trunc);
  if (!labels) throw IoError("cannot write " + (dir / "labels.csv").string());
  std::vector<Index> per_label(static_cast<std::size_t>(class_count), 0);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto stem = sample_stem(i);
    write_ppm(dir / "images" / (stem + ".ppm"), samples[i].image);
    write_pgm(dir / "masks" / (stem + ".pgm"), samples[i].gt_mask);
    labels << i << ',' << samples[i].label << '\n';
    ++per_label.at(static_cast<std::size_t>(samples[i].label));
  }
  nlohmann::json manifest;
  manifest["seed"] = seed;
  manifest["class_count"] = class_count;
  manifest["image_size"] = samples.empty() ? 0 : samples.front().image.dim(1);
  manifest["sample_count"] = samples.size();
  manifest["per_label"] = per_label;
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw IoError("cannot write manifest in " + dir.string());
  out << manifest.dump(2) << '\n';
}

DatasetManifest read_manifest(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw IoError("no manifest.json in " + dir.string());
  DatasetManifest m;
  try {
    const auto j = nlohmann::json::parse(in);
    m.seed = j.at("seed").get<std::uint64_t>();
    m.class_count = j.at("class_count").get<Index>();
    m.image_size = j.at("image_size").get<Index>();
    m.per_label = j.at("per_label").get<std::vector<Index>>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad manifest in " + dir.string() + ": " + e.what());
  }
  return m;
}

namespace {

std::vector<std::pair<std::size_t, int>> read_labels(const std::filesystem::path& dir) {
  std::ifstream in(dir / "labels.csv");
  if (!in) throw IoError("missing dataset labels " + (dir / "labels.csv").string());
  std::vector<std::pair<std::size_t, int>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::size_t index;
    char comma;
    int label;
    if (!(ls >> index >> comma >> label) || comma != ',' || label < 0) {
      throw IoError((dir / "labels.csv").string() + ":" + std::to_string(line_no) + ": expected 'index,label'");
    }
    rows.emplace_back(index, label);
  }
  return rows;
}

}  // namespace

std::vector<LabeledImage> load_training_set(const std::filesystem::path& dir) {
  std::vector<LabeledImage> out;
  for (const auto& [index, label] : read_labels(dir)) {
    out.push_back({read_ppm(dir / "images" / (sample_stem(index) + ".ppm")), label});
  }
  return out;
}

std::vector<Sample> load_evaluation_set(const std::filesystem::path& dir) {
  std::vector<Sample> out;
  for (const auto& [index, label] : read_labels(dir)) {
    const auto stem = sample_stem(index);
    out.push_back({read_ppm(dir / "images" / (stem + ".ppm")), label, read_pgm(dir / "masks" / (stem + ".pgm"))});
  }
  return out;
}

}  // namespace milseg
