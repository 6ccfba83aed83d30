#ifndef MILSEG_PROPOSALS_HPP
#define MILSEG_PROPOSALS_HPP

#include "milseg/image_io.hpp"
#include "milseg/tensor.hpp"

#include <filesystem>
#include <vector>

namespace milseg {

enum class ProposalKind { Boxes, Masks };

/// Inclusive pixel rectangle.
struct Box {
  Index x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  friend bool operator==(const Box&, const Box&) = default;
};

struct Region {
  Box box;         // used when the set holds boxes
  LabelMask mask;  // nonzero = member; used when the set holds masks
  double score = 0.0;
};

/// Scored candidate regions with scores in [0, 1].
struct ProposalSet {
  ProposalKind kind = ProposalKind::Boxes;
  std::vector<Region> regions;
};

/// Min-max rescales scores to [0, 1]; equal scores (including a single
/// region) all become 1.
void normalize_scores(ProposalSet& set);

/// Reads one region per line, either `x0,y0,x1,y1,score` or
/// `maskfile.pgm,score` (mask paths relative to the proposal file). Blank
/// lines and `#` comments are skipped. Scores are min-max normalized.
ProposalSet load_proposals(const std::filesystem::path& path);
void save_proposals(const std::filesystem::path& path, const ProposalSet& set);

/// Multi-scale sliding windows scored by mean gradient magnitude inside
/// the box minus the mean on its border ring; the `count` best windows are
/// kept (ties by enumeration order) and their scores normalized.
ProposalSet naive_proposals(const Tensord& image, Index count);

}  // namespace milseg

#endif  // MILSEG_PROPOSALS_HPP
