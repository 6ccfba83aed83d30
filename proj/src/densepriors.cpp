#include "milseg/densepriors.hpp"

#include "milseg/errors.hpp"
#include "milseg/synthgen.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <stdexcept>

namespace milseg {

void ThresholdSet::validate() const {
  for (double d : delta) {
    if (!(d >= 0.0 && d < 1.0)) throw std::invalid_argument("thresholds must lie in [0, 1), got " + std::to_string(d));
  }
}

namespace {

Index reflect_index(Index i, Index n) {
  if (n == 1) return 0;
  const Index period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

}  // namespace

Tensord reflect_pad(const Tensord& image, Index top, Index bottom, Index left, Index right) {
  require_rank(image.shape(), 3, "reflect_pad");
  if (top < 0 || bottom < 0 || left < 0 || right < 0) throw std::invalid_argument("padding must be nonnegative");
  const Index h = image.dim(1), w = image.dim(2);
  Tensord out({image.dim(0), h + top + bottom, w + left + right});
  for (Index c = 0; c < image.dim(0); ++c) {
    for (Index y = 0; y < out.dim(1); ++y) {
      const Index sy = reflect_index(y - top, h);
      for (Index x = 0; x < out.dim(2); ++x) out(c, y, x) = image(c, sy, reflect_index(x - left, w));
    }
  }
  return out;
}

DensePadding dense_padding(const NetworkSpec& spec) {
  const Index rf = spec.receptive_field(), d = spec.downsample();
  const Index before = (rf - 1) / 2;
  return {before, rf - 1 - before + d - 1};
}

ScoreMaps dense_scores_padded(const Tensord& padded, const NetworkParams& params, const NetworkSpec& spec,
                              Index out_h, Index out_w) {
  require_rank(padded.shape(), 3, "dense_scores");
  const Index d = spec.downsample();
  if (d <= 0) throw std::invalid_argument("downsample factor must be positive");
  if (out_h <= 0 || out_w <= 0) throw std::invalid_argument("dense output must be nonempty");

  ScoreMaps out({spec.class_count, out_h, out_w});
  for (Index dy = 0; dy < std::min(d, out_h); ++dy) {
    for (Index dx = 0; dx < std::min(d, out_w); ++dx) {
      const Index need_h = (out_h - dy + d - 1) / d, need_w = (out_w - dx + d - 1) / d;
      const Index in_h = padded.dim(1) - dy, in_w = padded.dim(2) - dx;
      if (spec.output_extent(in_h) < need_h || spec.output_extent(in_w) < need_w) {
        throw ShapeError("dense_scores: padded input " + shape_string(padded.shape()) + " is too small for a " +
                         std::to_string(out_h) + "x" + std::to_string(out_w) + " output");
      }
      Tensord shifted({padded.dim(0), in_h, in_w});
      for (Index c = 0; c < padded.dim(0); ++c) shifted.plane(c) = padded.plane(c).block(dy, dx, in_h, in_w);
      const ScoreMaps y = forward(shifted, params, spec, Mode::Eval);
      for (Index k = 0; k < spec.class_count; ++k) {
        for (Index oy = 0; oy < need_h; ++oy) {
          for (Index ox = 0; ox < need_w; ++ox) out(k, dy + d * oy, dx + d * ox) = y(k, oy, ox);
        }
      }
    }
  }
  return out;
}

ScoreMaps dense_scores(const Tensord& image, const NetworkParams& params, const NetworkSpec& spec) {
  require_rank(image.shape(), 3, "dense_scores");
  const auto pad = dense_padding(spec);
  const Tensord padded = reflect_pad(image, pad.before, pad.after, pad.before, pad.after);
  return dense_scores_padded(padded, params, spec, image.dim(1), image.dim(2));
}

ScoreMaps dense_scores_upsampled(const Tensord& image, const NetworkParams& params, const NetworkSpec& spec) {
  require_rank(image.shape(), 3, "dense_scores_upsampled");
  const auto pad = dense_padding(spec);
  const Index d = spec.downsample(), h = image.dim(1), w = image.dim(2);
  const ScoreMaps y = forward(reflect_pad(image, pad.before, pad.after, pad.before, pad.after), params, spec, Mode::Eval);
  ScoreMaps out({spec.class_count, h, w});
  for (Index k = 0; k < spec.class_count; ++k) {
    for (Index i = 0; i < h; ++i) {
      const Index oy = std::min((i + d / 2) / d, y.dim(1) - 1);
      for (Index j = 0; j < w; ++j) out(k, i, j) = y(k, oy, std::min((j + d / 2) / d, y.dim(2) - 1));
    }
  }
  return out;
}

ProbMaps pixel_posteriors(const ScoreMaps& maps) {
  require_rank(maps.shape(), 3, "pixel_posteriors");
  const Index classes = maps.dim(0), n = maps.dim(1) * maps.dim(2);
  ProbMaps probs(maps.shape());
  const auto s = maps.matrix(classes, n);
  auto p = probs.matrix(classes, n);
  const Eigen::RowVectorXd m = s.colwise().maxCoeff();
  p = (s.rowwise() - m).array().exp().matrix();
  const Eigen::RowVectorXd z = p.colwise().sum();
  p.array().rowwise() /= z.array();
  return probs;
}

ImagePrior image_prior(const ScoreMaps& maps, const AggregatorKind& aggregator) {
  return class_posteriors(aggregate_forward(maps, aggregator));
}

Tensord apply_ilp(const ProbMaps& probs, const ImagePrior& prior) {
  require_rank(probs.shape(), 3, "apply_ilp");
  if (prior.size() != probs.dim(0)) throw ShapeError("apply_ilp: prior length does not match class count");
  Tensord out = probs;
  const Index n = probs.dim(1) * probs.dim(2);
  out.matrix(probs.dim(0), n).array().colwise() *= prior.array();
  return out;
}

LabelMask argmax_labels(const Tensord& maps) {
  require_rank(maps.shape(), 3, "argmax_labels");
  LabelMask mask(maps.dim(1), maps.dim(2));
  const Index n = mask.size();
  const auto m = maps.matrix(maps.dim(0), n);
  for (Index p = 0; p < n; ++p) {
    Index best = 0;
    for (Index k = 1; k < m.rows(); ++k) {
      if (m(k, p) > m(best, p)) best = k;
    }
    mask.data()[p] = static_cast<std::int32_t>(best);
  }
  return mask;
}

LabelMask smooth_sppxl(const LabelMask& mask, const SuperpixelPartition& partition) {
  if (mask.rows() != partition.ids.rows() || mask.cols() != partition.ids.cols()) {
    throw ShapeError("smooth_sppxl: mask and partition dimensions differ");
  }
  const Index classes = mask.size() ? mask.maxCoeff() + 1 : 1;
  Eigen::MatrixXi votes = Eigen::MatrixXi::Zero(partition.count, classes);
  for (Index p = 0; p < mask.size(); ++p) ++votes(partition.ids.data()[p], mask.data()[p]);
  std::vector<std::int32_t> winner(static_cast<std::size_t>(partition.count));
  for (Index s = 0; s < partition.count; ++s) {
    Index best = 0;
    votes.row(s).maxCoeff(&best);  // first maximum, so ties go to the lower class
    winner[static_cast<std::size_t>(s)] = static_cast<std::int32_t>(best);
  }
  LabelMask out(mask.rows(), mask.cols());
  for (Index p = 0; p < mask.size(); ++p) out.data()[p] = winner[static_cast<std::size_t>(partition.ids.data()[p])];
  return out;
}

ObjectnessMap objectness_map(const ProposalSet& proposals, Index height, Index width) {
  ObjectnessMap sum = ObjectnessMap::Zero(height, width);
  RowMatrix<int> covered = RowMatrix<int>::Zero(height, width);
  for (std::size_t i = 0; i < proposals.regions.size(); ++i) {
    const auto& r = proposals.regions[i];
    if (proposals.kind == ProposalKind::Boxes) {
      const auto& b = r.box;
      if (b.x0 < 0 || b.y0 < 0 || b.x1 >= width || b.y1 >= height || b.x1 < b.x0 || b.y1 < b.y0) {
        throw std::out_of_range("proposal " + std::to_string(i) + " lies outside the " + std::to_string(width) + "x" +
                                std::to_string(height) + " image");
      }
      for (Index y = b.y0; y <= b.y1; ++y) {
        for (Index x = b.x0; x <= b.x1; ++x) {
          sum(y, x) += r.score;
          ++covered(y, x);
        }
      }
    } else {
      if (r.mask.rows() != height || r.mask.cols() != width) {
        throw std::out_of_range("mask proposal " + std::to_string(i) + " does not match the image size");
      }
      for (Index y = 0; y < height; ++y) {
        for (Index x = 0; x < width; ++x) {
          if (r.mask(y, x) == 0) continue;
          sum(y, x) += r.score;
          ++covered(y, x);
        }
      }
    }
  }
  for (Index p = 0; p < sum.size(); ++p) {
    if (covered.data()[p] > 0) sum.data()[p] /= covered.data()[p];
  }
  return sum;
}

LabelMask smooth_proposals(const Tensord& weighted, const ObjectnessMap& objectness, const ThresholdSet& thresholds) {
  require_rank(weighted.shape(), 3, "smooth_proposals");
  const Index classes = weighted.dim(0), h = weighted.dim(1), w = weighted.dim(2);
  if (objectness.rows() != h || objectness.cols() != w) throw ShapeError("smooth_proposals: objectness size mismatch");
  if (static_cast<Index>(thresholds.delta.size()) != classes) throw ShapeError("smooth_proposals: one threshold per class required");
  if (classes < 2) throw ShapeError("smooth_proposals: need at least one foreground class");
  LabelMask out(h, w);
  const auto m = weighted.matrix(classes, h * w);
  for (Index p = 0; p < h * w; ++p) {
    Index best = 1;
    for (Index k = 2; k < classes; ++k) {
      if (m(k, p) > m(best, p)) best = k;
    }
    const bool keep = m(best, p) * objectness.data()[p] > thresholds.delta[static_cast<std::size_t>(best)];
    out.data()[p] = keep ? static_cast<std::int32_t>(best) : 0;
  }
  return out;
}

std::string to_string(PriorSelection p) {
  switch (p) {
    case PriorSelection::None:
      return "none";
    case PriorSelection::Ilp:
      return "ilp";
    case PriorSelection::IlpSppxl:
      return "ilp+sppxl";
    case PriorSelection::IlpBb:
      return "ilp+bb";
    case PriorSelection::IlpSeg:
      return "ilp+seg";
  }
  return "?";
}

PriorSelection parse_prior(const std::string& name) {
  for (auto p : {PriorSelection::None, PriorSelection::Ilp, PriorSelection::IlpSppxl, PriorSelection::IlpBb,
                 PriorSelection::IlpSeg}) {
    if (to_string(p) == name) return p;
  }
  throw std::invalid_argument("unknown prior '" + name + "' (expected none, ilp, ilp+sppxl, ilp+bb or ilp+seg)");
}

bool needs_proposals(PriorSelection p) { return p == PriorSelection::IlpBb || p == PriorSelection::IlpSeg; }

InferenceResult infer(const Tensord& image, const NetworkParams& params, const NetworkSpec& spec,
                      const InferenceOptions& options, const ProposalSet* proposals) {
  InferenceResult r;
  const Tensord normalized = normalize_image(image);
  r.scores = options.upsample ? dense_scores_upsampled(normalized, params, spec) : dense_scores(normalized, params, spec);
  r.probs = pixel_posteriors(r.scores);
  if (options.prior == PriorSelection::None) {
    r.weighted = r.probs;
    r.mask = argmax_labels(r.weighted);
    return r;
  }
  r.weighted = apply_ilp(r.probs, image_prior(r.scores, AggregatorKind::lse(options.lse_r)));
  switch (options.prior) {
    case PriorSelection::Ilp:
      r.mask = argmax_labels(r.weighted);
      break;
    case PriorSelection::IlpSppxl: {
      Tensord scaled = image;
      scaled.values() *= 255.0;
      r.mask = smooth_sppxl(argmax_labels(r.weighted),
                            felzenszwalb_segment(scaled, options.felzenszwalb_k, options.felzenszwalb_min_size));
      break;
    }
    case PriorSelection::IlpBb:
    case PriorSelection::IlpSeg: {
      if (proposals == nullptr) throw std::invalid_argument("prior " + to_string(options.prior) + " needs proposals");
      const auto thresholds = options.thresholds.value_or(ThresholdSet::uniform(spec.class_count, 0.0));
      thresholds.validate();
      r.mask = smooth_proposals(r.weighted, objectness_map(*proposals, image.dim(1), image.dim(2)), thresholds);
      break;
    }
    case PriorSelection::None:
      break;
  }
  return r;
}

void write_prob_maps(const std::filesystem::path& path, const ProbMaps& probs) {
  require_rank(probs.shape(), 3, "write_prob_maps");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  auto put = [&](double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) out.put(static_cast<char>((bits >> (8 * i)) & 0xff));
  };
  put(kProbMapsMagic);
  put(static_cast<double>(probs.dim(0)));
  put(static_cast<double>(probs.dim(1)));
  put(static_cast<double>(probs.dim(2)));
  for (int i = 0; i < 4; ++i) put(0.0);
  for (Index i = 0; i < probs.size(); ++i) put(probs[i]);
  if (!out) throw IoError("short write to " + path.string());
}

ProbMaps read_prob_maps(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  auto get = [&] {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    if (!in) throw IoError(path.string() + ": truncated probability dump");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return std::bit_cast<double>(bits);
  };
  if (get() != kProbMapsMagic) throw IoError(path.string() + ": not a probability dump");
  const auto c = static_cast<Index>(get()), h = static_cast<Index>(get()), w = static_cast<Index>(get());
  for (int i = 0; i < 4; ++i) get();
  ProbMaps probs({c, h, w});
  for (Index i = 0; i < probs.size(); ++i) probs[i] = get();
  return probs;
}

}  // namespace milseg
