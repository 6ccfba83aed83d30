#ifndef MILSEG_DENSEPRIORS_HPP
#define MILSEG_DENSEPRIORS_HPP

#include "milseg/aggregation.hpp"
#include "milseg/felzenszwalb.hpp"
#include "milseg/image_io.hpp"
#include "milseg/proposals.hpp"
#include "milseg/segnet.hpp"

#include <optional>
#include <string>
#include <vector>

namespace milseg {

/// classes x h x w per-pixel class probabilities.
using ProbMaps = Tensord;
/// One probability per class, background first.
using ImagePrior = Eigen::VectorXd;
using ObjectnessMap = RowMatrix<double>;

/// Per-class confidence thresholds for the proposal smoothing priors.
/// Entry 0 (background) is carried along but never consulted.
struct ThresholdSet {
  std::vector<double> delta;

  static ThresholdSet uniform(Index class_count, double value) {
    return {std::vector<double>(static_cast<std::size_t>(class_count), value)};
  }
  void validate() const;
  friend bool operator==(const ThresholdSet&, const ThresholdSet&) = default;
};

/// Reflection about the edge pixel (the edge itself is not repeated).
Tensord reflect_pad(const Tensord& image, Index top, Index bottom, Index left, Index right);

/// Padding that centres every output pixel's receptive field on it and
/// leaves the d - 1 extra rows/columns the shifted passes need.
struct DensePadding {
  Index before = 0;
  Index after = 0;
};
DensePadding dense_padding(const NetworkSpec& spec);

/// Full-resolution scores by shift-and-stitch: the padded image is forwarded
/// once per shift (dy, dx) in [0, d)^2 and output cell (oy, ox) of shift
/// (dy, dx) is written to pixel (dy + d*oy, dx + d*ox). Pixel (i, j) then
/// holds the network's score for the receptive field centred on (i, j).
ScoreMaps dense_scores(const Tensord& image, const NetworkParams& params, const NetworkSpec& spec);

/// The stitching step on an already padded image, producing out_h x out_w.
ScoreMaps dense_scores_padded(const Tensord& padded, const NetworkParams& params, const NetworkSpec& spec,
                              Index out_h, Index out_w);

/// One forward pass, upsampled by nearest neighbour. Faster, coarser.
ScoreMaps dense_scores_upsampled(const Tensord& image, const NetworkParams& params, const NetworkSpec& spec);

/// Softmax over classes at every location.
ProbMaps pixel_posteriors(const ScoreMaps& maps);

/// Softmax over the aggregated score of each plane.
ImagePrior image_prior(const ScoreMaps& maps, const AggregatorKind& aggregator);

/// probs(k, i, j) * prior(k), unnormalized.
Tensord apply_ilp(const ProbMaps& probs, const ImagePrior& prior);

/// Per-pixel argmax over all classes; ties go to the lower class index.
LabelMask argmax_labels(const Tensord& maps);

/// Relabels every superpixel with its most frequent class (ties to the
/// lower class index).
LabelMask smooth_sppxl(const LabelMask& mask, const SuperpixelPartition& partition);

/// Mean score of the regions covering each pixel; 0 where none do.
ObjectnessMap objectness_map(const ProposalSet& proposals, Index height, Index width);

/// Per pixel: k = argmax over foreground classes of weighted(k); keep k when
/// weighted(k) * objectness > delta_k, otherwise background.
LabelMask smooth_proposals(const Tensord& weighted, const ObjectnessMap& objectness, const ThresholdSet& thresholds);

enum class PriorSelection { None, Ilp, IlpSppxl, IlpBb, IlpSeg };

std::string to_string(PriorSelection p);
PriorSelection parse_prior(const std::string& name);
bool needs_proposals(PriorSelection p);

struct InferenceOptions {
  PriorSelection prior = PriorSelection::IlpSppxl;
  double lse_r = 5.0;
  double felzenszwalb_k = 200.0;  // in 8-bit colour units
  Index felzenszwalb_min_size = 20;
  std::optional<ThresholdSet> thresholds;
  bool upsample = false;
};

struct InferenceResult {
  ScoreMaps scores;
  ProbMaps probs;
  Tensord weighted;  // after ILP (equal to probs when no prior is used)
  LabelMask mask;
};

/// base -> ILP -> smoothing prior, on a raw [0, 1] image.
InferenceResult infer(const Tensord& image, const NetworkParams& params, const NetworkSpec& spec,
                      const InferenceOptions& options, const ProposalSet* proposals = nullptr);

/// Raw f64 dump: 8 header doubles (magic, classes, h, w, 0, 0, 0, 0) then
/// the planes in class-major row-major order.
void write_prob_maps(const std::filesystem::path& path, const ProbMaps& probs);
ProbMaps read_prob_maps(const std::filesystem::path& path);
constexpr double kProbMapsMagic = 0x4D494C50;  // "MILP"

}  // namespace milseg

#endif  // MILSEG_DENSEPRIORS_HPP
