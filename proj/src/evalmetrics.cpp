#include "milseg/evalmetrics.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace milseg {

ClassConfusion::ClassConfusion(Index class_count)
    : tp(static_cast<std::size_t>(class_count)), fp(static_cast<std::size_t>(class_count)),
      fn(static_cast<std::size_t>(class_count)) {}

void ClassConfusion::add(const LabelMask& pred, const LabelMask& gt) {
  if (pred.rows() != gt.rows() || pred.cols() != gt.cols()) {
    throw ShapeError("prediction " + std::to_string(pred.rows()) + "x" + std::to_string(pred.cols()) +
                     " does not match ground truth " + std::to_string(gt.rows()) + "x" + std::to_string(gt.cols()));
  }
  const auto n = static_cast<std::int32_t>(class_count());
  for (Index p = 0; p < pred.size(); ++p) {
    const auto a = pred.data()[p], b = gt.data()[p];
    if (a < 0 || a >= n || b < 0 || b >= n) throw std::out_of_range("label outside [0, " + std::to_string(n) + ")");
    if (a == b) {
      ++tp[static_cast<std::size_t>(a)];
    } else {
      ++fp[static_cast<std::size_t>(a)];
      ++fn[static_cast<std::size_t>(b)];
    }
  }
}

ClassConfusion confusion(std::span<const LabelMask> preds, std::span<const LabelMask> gts, Index class_count) {
  if (preds.size() != gts.size()) throw ShapeError("prediction and ground-truth lists differ in length");
  ClassConfusion c(class_count);
  for (std::size_t i = 0; i < preds.size(); ++i) c.add(preds[i], gts[i]);
  return c;
}

AccuracyReport per_class_accuracy(std::span<const LabelMask> preds, std::span<const LabelMask> gts, Index class_count) {
  const auto c = confusion(preds, gts, class_count);
  AccuracyReport r;
  double sum = 0.0;
  int present = 0;
  for (Index k = 0; k < class_count; ++k) {
    if (c.gt_count(k) == 0) {
      r.per_class.emplace_back();
      continue;
    }
    const double acc = static_cast<double>(c.tp[static_cast<std::size_t>(k)]) / static_cast<double>(c.gt_count(k));
    r.per_class.emplace_back(acc);
    sum += acc;
    ++present;
  }
  r.mean = present ? sum / present : 0.0;
  return r;
}

std::optional<double> voc_ap(const ClassConfusion& counts, Index k) {
  const auto i = static_cast<std::size_t>(k);
  const auto denom = counts.tp[i] + counts.fp[i] + counts.fn[i];
  if (denom == 0) return std::nullopt;
  return static_cast<double>(counts.tp[i]) / static_cast<double>(denom);
}

std::optional<double> voc_ap(std::span<const LabelMask> preds, std::span<const LabelMask> gts, Index k,
                             Index class_count) {
  return voc_ap(confusion(preds, gts, class_count), k);
}

double mean_ap(const ClassConfusion& counts) {
  double sum = 0.0;
  int applicable = 0;
  for (Index k = 0; k < counts.class_count(); ++k) {
    if (auto ap = voc_ap(counts, k)) {
      sum += *ap;
      ++applicable;
    }
  }
  if (applicable == 0) throw std::invalid_argument("mean_ap: no class is present in predictions or ground truth");
  return sum / applicable;
}

double mean_ap(std::span<const LabelMask> preds, std::span<const LabelMask> gts, Index class_count) {
  if (preds.empty()) throw std::invalid_argument("mean_ap: empty evaluation set");
  return mean_ap(confusion(preds, gts, class_count));
}

ThresholdSet grid_search_thresholds(std::span<const ThresholdSearchItem> validation, std::vector<double> grid,
                                    Index class_count) {
  if (validation.empty()) throw std::invalid_argument("grid search needs a nonempty validation set");
  if (grid.empty()) throw std::invalid_argument("grid search needs at least one candidate threshold");
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  ThresholdSet{grid}.validate();

  ThresholdSet best = ThresholdSet::uniform(class_count, grid.front());
  for (Index k = 1; k < class_count; ++k) {
    double best_ap = -1.0;
    double best_delta = grid.front();
    for (double delta : grid) {
      ThresholdSet trial = best;
      trial.delta[static_cast<std::size_t>(k)] = delta;
      ClassConfusion counts(class_count);
      for (const auto& item : validation) counts.add(smooth_proposals(item.weighted, item.objectness, trial), item.gt);
      const double ap = voc_ap(counts, k).value_or(-1.0);
      if (ap > best_ap) {
        best_ap = ap;
        best_delta = delta;
      }
    }
    best.delta[static_cast<std::size_t>(k)] = best_delta;
  }
  return best;
}

}  // namespace milseg
