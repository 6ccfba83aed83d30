#include "milseg/proposals.hpp"

#include "milseg/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <string>

namespace milseg {

void normalize_scores(ProposalSet& set) {
  if (set.regions.empty()) return;
  auto [lo, hi] = std::minmax_element(set.regions.begin(), set.regions.end(),
                                      [](const Region& a, const Region& b) { return a.score < b.score; });
  const double min = lo->score, span = hi->score - lo->score;
  for (auto& r : set.regions) r.score = span > 0.0 ? (r.score - min) / span : 1.0;
}

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::stringstream ss(line);
  std::string f;
  while (std::getline(ss, f, ',')) {
    const auto b = f.find_first_not_of(" \t\r");
    const auto e = f.find_last_not_of(" \t\r");
    fields.push_back(b == std::string::npos ? std::string() : f.substr(b, e - b + 1));
  }
  return fields;
}

template <typename T>
bool parse_number(const std::string& s, T& out) {
  std::istringstream in(s);
  in >> out;
  return in && in.peek() == std::char_traits<char>::eof();
}

}  // namespace

ProposalSet load_proposals(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open proposal file " + path.string());
  ProposalSet set;
  bool kind_known = false;
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& why) {
    throw IoError(path.string() + ":" + std::to_string(line_no) + ": " + why);
  };
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto fields = split_fields(line);
    Region r;
    ProposalKind kind;
    if (fields.size() == 5) {
      kind = ProposalKind::Boxes;
      if (!parse_number(fields[0], r.box.x0) || !parse_number(fields[1], r.box.y0) ||
          !parse_number(fields[2], r.box.x1) || !parse_number(fields[3], r.box.y1)) {
        fail("box corners must be integers");
      }
      if (r.box.x1 < r.box.x0 || r.box.y1 < r.box.y0) fail("box corners out of order");
      if (!parse_number(fields[4], r.score)) fail("bad score");
    } else if (fields.size() == 2) {
      kind = ProposalKind::Masks;
      if (fields[0].empty()) fail("empty mask path");
      if (!parse_number(fields[1], r.score)) fail("bad score");
      r.mask = read_pgm(path.parent_path() / fields[0]);
    } else {
      fail("expected 'x0,y0,x1,y1,score' or 'mask.pgm,score'");
    }
    if (!std::isfinite(r.score)) fail("score must be finite");
    if (kind_known && kind != set.kind) fail("boxes and masks cannot be mixed in one file");
    set.kind = kind;
    kind_known = true;
    set.regions.push_back(std::move(r));
  }
  if (set.regions.empty()) throw IoError(path.string() + ": no proposals");
  normalize_scores(set);
  return set;
}

void save_proposals(const std::filesystem::path& path, const ProposalSet& set) {
  if (set.kind != ProposalKind::Boxes) throw IoError("save_proposals: only box sets can be written");
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.precision(17);
  for (const auto& r : set.regions) {
    out << r.box.x0 << ',' << r.box.y0 << ',' << r.box.x1 << ',' << r.box.y1 << ',' << r.score << '\n';
  }
}

ProposalSet naive_proposals(const Tensord& image, Index count) {
  require_rank(image.shape(), 3, "naive_proposals");
  if (count <= 0) throw std::invalid_argument("proposal count must be positive");
  const Index h = image.dim(1), w = image.dim(2);

  // gradient magnitude summed over channels, then its integral image
  RowMatrix<double> grad = RowMatrix<double>::Zero(h, w);
  for (Index c = 0; c < image.dim(0); ++c) {
    for (Index y = 0; y < h; ++y) {
      for (Index x = 0; x < w; ++x) {
        const double gx = image(c, y, std::min(x + 1, w - 1)) - image(c, y, std::max<Index>(x - 1, 0));
        const double gy = image(c, std::min(y + 1, h - 1), x) - image(c, std::max<Index>(y - 1, 0), x);
        grad(y, x) += std::sqrt(gx * gx + gy * gy);
      }
    }
  }
  RowMatrix<double> integral = RowMatrix<double>::Zero(h + 1, w + 1);
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      integral(y + 1, x + 1) = grad(y, x) + integral(y, x + 1) + integral(y + 1, x) - integral(y, x);
    }
  }
  auto box_sum = [&](Index x0, Index y0, Index x1, Index y1) {
    return integral(y1 + 1, x1 + 1) - integral(y0, x1 + 1) - integral(y1 + 1, x0) + integral(y0, x0);
  };
  auto score = [&](const Box& b) {
    const Index bw = b.x1 - b.x0 + 1, bh = b.y1 - b.y0 + 1;
    const Index ring = std::max<Index>(1, std::min(bw, bh) / 8);
    const double total = box_sum(b.x0, b.y0, b.x1, b.y1);
    if (bw <= 2 * ring || bh <= 2 * ring) return 0.0;
    const double inner = box_sum(b.x0 + ring, b.y0 + ring, b.x1 - ring, b.y1 - ring);
    const double inner_area = static_cast<double>((bw - 2 * ring) * (bh - 2 * ring));
    const double border_area = static_cast<double>(bw * bh) - inner_area;
    return inner / inner_area - (total - inner) / border_area;
  };

  // coarse windows first, falling back to every window at stride 1
  std::vector<Box> boxes;
  std::set<std::tuple<Index, Index, Index, Index>> seen;
  auto add = [&](Index bw, Index bh, Index stride) {
    if (bw > w || bh > h || bw < 1 || bh < 1) return;
    for (Index y = 0; y + bh <= h; y += stride) {
      for (Index x = 0; x + bw <= w; x += stride) {
        if (seen.emplace(x, y, bw, bh).second) boxes.push_back({x, y, x + bw - 1, y + bh - 1});
      }
    }
  };
  const Index side = std::min(h, w);
  for (int step = 3; step <= 20; ++step) {
    const auto s = static_cast<Index>(std::lround(side * step * 0.05));
    for (double aspect : {1.0, 0.7, 1.4}) {
      const auto bw = static_cast<Index>(std::lround(s * std::sqrt(aspect)));
      const auto bh = static_cast<Index>(std::lround(s / std::sqrt(aspect)));
      add(bw, bh, std::max<Index>(1, s / 6));
    }
  }
  for (Index bh = 1; static_cast<Index>(boxes.size()) < count && bh <= h; ++bh) {
    for (Index bw = 1; bw <= w; ++bw) add(bw, bh, 1);
  }
  if (static_cast<Index>(boxes.size()) < count) {
    throw std::invalid_argument("cannot generate " + std::to_string(count) + " distinct boxes in a " +
                                std::to_string(h) + "x" + std::to_string(w) + " image");
  }

  std::vector<double> scores(boxes.size());
  for (std::size_t i = 0; i < boxes.size(); ++i) scores[i] = score(boxes[i]);
  std::vector<std::size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  ProposalSet set;
  set.kind = ProposalKind::Boxes;
  for (Index i = 0; i < count; ++i) {
    const auto j = order[static_cast<std::size_t>(i)];
    set.regions.push_back({boxes[j], LabelMask(), scores[j]});
  }
  normalize_scores(set);
  return set;
}

}  // namespace milseg
