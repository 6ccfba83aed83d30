#ifndef MILSEG_FELZENSZWALB_HPP
#define MILSEG_FELZENSZWALB_HPP

#include "milseg/image_io.hpp"
#include "milseg/tensor.hpp"

namespace milseg {

/// Per-pixel component ids, dense in [0, count), each component 4-connected.
struct SuperpixelPartition {
  LabelMask ids;
  Index count = 0;
};

/// Graph-based over-segmentation (Felzenszwalb & Huttenlocher).
///
/// Pixels are joined over an 8-connected grid whose edge weights are the
/// Euclidean distances between pixel colours, in the units of `image`.
/// Edges are visited by increasing weight (ties in lexicographic pixel-pair
/// order) and two components merge when the edge weight is at most
/// min(Int(A) + k/|A|, Int(B) + k/|B|).
///
/// Components that are only diagonally connected are then split into
/// their 4-connected pieces, and pieces smaller than `min_size` are merged
/// into a 4-adjacent neighbour along the cheapest remaining edge.
SuperpixelPartition felzenszwalb_segment(const Tensord& image, double k, Index min_size);

}  // namespace milseg

#endif  // MILSEG_FELZENSZWALB_HPP
