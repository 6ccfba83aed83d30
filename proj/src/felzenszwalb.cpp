#include "milseg/felzenszwalb.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace milseg {
namespace {

class DisjointSets {
 public:
  explicit DisjointSets(Index n) : parent_(static_cast<std::size_t>(n)), size_(static_cast<std::size_t>(n), 1) {
    std::iota(parent_.begin(), parent_.end(), Index{0});
  }

  Index find(Index x) {
    while (parent_[static_cast<std::size_t>(x)] != x) {
      auto& p = parent_[static_cast<std::size_t>(x)];
      p = parent_[static_cast<std::size_t>(p)];
      x = p;
    }
    return x;
  }

  // Returns the surviving root.
  Index join(Index a, Index b) {
    if (size_[static_cast<std::size_t>(a)] < size_[static_cast<std::size_t>(b)]) std::swap(a, b);
    parent_[static_cast<std::size_t>(b)] = a;
    size_[static_cast<std::size_t>(a)] += size_[static_cast<std::size_t>(b)];
    return a;
  }

  Index size(Index root) const { return size_[static_cast<std::size_t>(root)]; }

 private:
  std::vector<Index> parent_;
  std::vector<Index> size_;
};

struct Edge {
  Index a, b;
  double weight;
  bool four_adjacent;
};

}  // namespace

SuperpixelPartition felzenszwalb_segment(const Tensord& image, double k, Index min_size) {
  require_rank(image.shape(), 3, "felzenszwalb_segment");
  if (!(k > 0.0)) throw std::invalid_argument("felzenszwalb: k must be positive");
  if (min_size <= 0) throw std::invalid_argument("felzenszwalb: min_size must be positive");
  const Index h = image.dim(1), w = image.dim(2), n = h * w, channels = image.dim(0);

  auto distance = [&](Index a, Index b) {
    double s = 0.0;
    for (Index c = 0; c < channels; ++c) {
      const double d = image[c * n + a] - image[c * n + b];
      s += d * d;
    }
    return std::sqrt(s);
  };

  // generated in lexicographic (a, b) order so a stable sort breaks ties by it
  std::vector<Edge> edges;
  edges.reserve(static_cast<std::size_t>(4 * n));
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      const Index a = y * w + x;
      if (x + 1 < w) edges.push_back({a, a + 1, distance(a, a + 1), true});
      if (y + 1 < h) {
        if (x > 0) edges.push_back({a, a + w - 1, distance(a, a + w - 1), false});
        edges.push_back({a, a + w, distance(a, a + w), true});
        if (x + 1 < w) edges.push_back({a, a + w + 1, distance(a, a + w + 1), false});
      }
    }
  }
  std::stable_sort(edges.begin(), edges.end(), [](const Edge& l, const Edge& r) { return l.weight < r.weight; });

  DisjointSets merged(n);
  std::vector<double> threshold(static_cast<std::size_t>(n), k);
  for (const auto& e : edges) {
    Index a = merged.find(e.a), b = merged.find(e.b);
    if (a == b) continue;
    if (e.weight <= threshold[static_cast<std::size_t>(a)] && e.weight <= threshold[static_cast<std::size_t>(b)]) {
      const Index root = merged.join(a, b);
      threshold[static_cast<std::size_t>(root)] = e.weight + k / static_cast<double>(merged.size(root));
    }
  }

  // split diagonal-only connections into 4-connected pieces
  DisjointSets pieces(n);
  for (const auto& e : edges) {
    if (!e.four_adjacent || merged.find(e.a) != merged.find(e.b)) continue;
    const Index a = pieces.find(e.a), b = pieces.find(e.b);
    if (a != b) pieces.join(a, b);
  }
  for (const auto& e : edges) {
    if (!e.four_adjacent) continue;
    const Index a = pieces.find(e.a), b = pieces.find(e.b);
    if (a != b && (pieces.size(a) < min_size || pieces.size(b) < min_size)) pieces.join(a, b);
  }

  SuperpixelPartition out;
  out.ids.resize(h, w);
  std::vector<Index> dense(static_cast<std::size_t>(n), -1);
  for (Index p = 0; p < n; ++p) {
    auto& id = dense[static_cast<std::size_t>(pieces.find(p))];
    if (id < 0) id = out.count++;
    out.ids.data()[p] = static_cast<std::int32_t>(id);
  }
  return out;
}

}  // namespace milseg
