#pragma once

#include <cmath>
#include <cstdint>

namespace nphfit {

/// SplitMix64: used both as the base generator and to derive independent
/// stream seeds, so restarts and worker streams never overlap.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t state_;
};

/// Counter-style splitting: (seed, stream) -> independent child seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  SplitMix64 g(seed ^ (0xA0761D6478BD642FULL * (stream + 1)));
  g.next();
  return g.next();
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  /// Uniform on the open interval (0,1).
  double uniform() { return (static_cast<double>(gen_.next() >> 11) + 0.5) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double exponential(double rate) { return -std::log(uniform()) / rate; }

  std::uint64_t next_u64() { return gen_.next(); }

 private:
  SplitMix64 gen_;
};

}  // namespace nphfit
