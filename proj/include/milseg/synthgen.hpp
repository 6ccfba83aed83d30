#ifndef MILSEG_SYNTHGEN_HPP
#define MILSEG_SYNTHGEN_HPP

#include "milseg/image_io.hpp"
#include "milseg/rng.hpp"
#include "milseg/segnet.hpp"
#include "milseg/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace milseg {

/// An image with its class label and the ground-truth mask. The mask is
/// for evaluation only; `training_view()` strips it.
struct Sample {
  Tensord image;  // 3 x h x w in [0, 1]
  int label = 0;
  LabelMask gt_mask;

  LabeledImage training_view() const { return {image, label}; }
};

struct JitterSpec {
  double flip_probability = 0.5;
  double max_rotation_deg = 20.0;
  double scale_min = 0.8;
  double scale_max = 1.2;
  double brightness = 0.1;  // additive offset drawn from [-brightness, brightness]
  double contrast_min = 0.8;
  double contrast_max = 1.2;

  static JitterSpec identity() { return {0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0}; }
  void validate() const;

  friend bool operator==(const JitterSpec&, const JitterSpec&) = default;
};

/// A concrete draw from a JitterSpec.
struct JitterParams {
  bool flip = false;
  double rotation_deg = 0.0;
  double scale = 1.0;
  double brightness = 0.0;
  double contrast = 1.0;
};

JitterParams draw_jitter(const JitterSpec& spec, RngStream& rng);

/// Name of the shape drawn for a label: disk, square, triangle, then n-gons.
std::string shape_name(int label);

/// `per_class` samples of each of `class_count` labels (label 0 is pure
/// background), interleaved so that sample i has label i % class_count.
std::vector<Sample> generate_dataset(Index class_count, Index per_class, Index image_size, std::uint64_t seed);

/// One sample of the dataset above, generated independently of the others.
Sample generate_sample(int label, Index image_size, std::uint64_t seed, std::uint64_t index);

/// Low-frequency coloured noise with a random linear gradient.
Tensord background_texture(Index height, Index width, RngStream& rng);

/// Flip, rotate and scale the image (bilinear) and mask (nearest neighbour)
/// together, then adjust brightness/contrast of the image. Pixels mapped
/// from outside the frame get fresh background texture and label 0.
Sample apply_jitter(const Sample& sample, const JitterSpec& spec, RngStream& rng);
Sample apply_jitter(const Sample& sample, const JitterParams& params, RngStream& rng);
/// Same transform applied to an image alone (the training path).
LabeledImage apply_jitter(const LabeledImage& sample, const JitterSpec& spec, RngStream& rng);

/// Per-channel zero mean and unit variance (variance floored at 1e-8).
Tensord normalize_image(const Tensord& image);

/// Central square crop; images whose smaller side is below `size` are first
/// rescaled so that side equals `size`.
Tensord training_crop(const Tensord& image, Index size);

Tensord resize_bilinear(const Tensord& image, Index height, Index width);

// ---- dataset directories ----------------------------------------------------
//
//   images/NNNNN.ppm   labels.csv ("index,label" lines)
//   masks/NNNNN.pgm    manifest.json

struct DatasetManifest {
  std::uint64_t seed = 0;
  Index class_count = 0;
  Index image_size = 0;
  std::vector<Index> per_label;  // sample count per label
};

std::string sample_stem(std::size_t index);
void write_dataset(const std::filesystem::path& dir, const std::vector<Sample>& samples, std::uint64_t seed,
                   Index class_count);
DatasetManifest read_manifest(const std::filesystem::path& dir);

/// Images and labels only; masks are never opened.
std::vector<LabeledImage> load_training_set(const std::filesystem::path& dir);
/// Images, labels and ground-truth masks.
std::vector<Sample> load_evaluation_set(const std::filesystem::path& dir);

}  // namespace milseg

#endif  // MILSEG_SYNTHGEN_HPP
