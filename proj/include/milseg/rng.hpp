#ifndef MILSEG_RNG_HPP
#define MILSEG_RNG_HPP

#include <cstdint>
#include <random>
#include <string_view>

namespace milseg {

/// Mixes a master seed with a stream name and a counter into an independent
/// 64-bit seed. Streams derived this way do not depend on evaluation order or
/// thread count.
std::uint64_t derive_seed(std::uint64_t master, std::string_view stream, std::uint64_t counter = 0);

/// A named random stream. Conversions to reals are done by hand so that the
/// produced sequence is identical across standard library implementations.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : engine_(seed) {}
  RngStream(std::uint64_t master, std::string_view stream, std::uint64_t counter = 0)
      : engine_(derive_seed(master, stream, counter)) {}

  std::uint64_t next() { return engine_(); }
  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  bool bernoulli(double p) { return uniform() < p; }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

 private:
  std::mt19937_64 engine_;
};

}  // namespace milseg

#endif  // MILSEG_RNG_HPP
