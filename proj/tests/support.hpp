#ifndef MILSEG_TESTS_SUPPORT_HPP
#define MILSEG_TESTS_SUPPORT_HPP

#include "milseg/layers.hpp"
#include "milseg/rng.hpp"
#include "milseg/segnet.hpp"

#include <filesystem>
#include <string>

namespace testsupport {

using namespace milseg;

inline Tensord random_tensor(const Shape& shape, RngStream& rng, double lo = -1.0, double hi = 1.0) {
  Tensord t(shape);
  for (Index i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

inline Index pick(RngStream& rng, Index lo, Index hi) {
  return lo + static_cast<Index>(rng.below(static_cast<std::uint64_t>(hi - lo + 1)));
}

// Direct six-loop valid convolution.
inline Tensord conv_reference(const Tensord& x, const LayerParams<double>& p, Index stride) {
  const Index oc = p.out_channels(), ic = p.in_channels(), kh = p.kernel_h(), kw = p.kernel_w();
  const Index oh = (x.dim(1) - kh) / stride + 1, ow = (x.dim(2) - kw) / stride + 1;
  Tensord y({oc, oh, ow});
  for (Index o = 0; o < oc; ++o)
    for (Index i = 0; i < oh; ++i)
      for (Index j = 0; j < ow; ++j) {
        double s = p.bias[o];
        for (Index c = 0; c < ic; ++c)
          for (Index u = 0; u < kh; ++u)
            for (Index v = 0; v < kw; ++v) s += p.weights[((o * ic + c) * kh + u) * kw + v] * x(c, i * stride + u, j * stride + v);
        y(o, i, j) = s;
      }
  return y;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("milseg_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testsupport

#endif  // MILSEG_TESTS_SUPPORT_HPP
