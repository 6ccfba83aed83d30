#ifndef MILSEG_EVALMETRICS_HPP
#define MILSEG_EVALMETRICS_HPP

#include "milseg/densepriors.hpp"
#include "milseg/image_io.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace milseg {

/// Pixel counts per class, accumulated over a whole evaluation set.
struct ClassConfusion {
  std::vector<std::int64_t> tp, fp, fn;

  explicit ClassConfusion(Index class_count = 0);
  Index class_count() const { return static_cast<Index>(tp.size()); }
  std::int64_t gt_count(Index k) const { return tp[static_cast<std::size_t>(k)] + fn[static_cast<std::size_t>(k)]; }
  void add(const LabelMask& pred, const LabelMask& gt);
};

ClassConfusion confusion(std::span<const LabelMask> preds, std::span<const LabelMask> gts, Index class_count);

struct AccuracyReport {
  /// correct / ground-truth pixels, empty for classes absent from the
  /// ground truth.
  std::vector<std::optional<double>> per_class;
  double mean = 0.0;
};

AccuracyReport per_class_accuracy(std::span<const LabelMask> preds, std::span<const LabelMask> gts, Index class_count);

/// TP / (TP + FP + FN) for class k; empty when the class appears in
/// neither prediction nor ground truth.
std::optional<double> voc_ap(const ClassConfusion& counts, Index k);
std::optional<double> voc_ap(std::span<const LabelMask> preds, std::span<const LabelMask> gts, Index k,
                             Index class_count);

/// Unweighted mean of voc_ap over applicable classes, background included.
double mean_ap(const ClassConfusion& counts);
double mean_ap(std::span<const LabelMask> preds, std::span<const LabelMask> gts, Index class_count);

/// Everything smooth_proposals needs for one validation image.
struct ThresholdSearchItem {
  Tensord weighted;
  ObjectnessMap objectness;
  LabelMask gt;
};

/// One coordinate sweep in class order: for each foreground class pick the
/// grid value maximising that class's AP with the other thresholds held
/// fixed (initially at the smallest grid value). Ties go to the smaller value.
ThresholdSet grid_search_thresholds(std::span<const ThresholdSearchItem> validation, std::vector<double> grid,
                                    Index class_count);

}  // namespace milseg

#endif  // MILSEG_EVALMETRICS_HPP
