#pragma once

// Seeded, portable pseudo-randomness.
//
// Everything stochastic in this library draws from SplitMix64 streams so that
// a (seed, stream) pair reproduces the same values on any platform and in any
// reimplementation. std::mt19937 is avoided on purpose: the engine is portable
// but the standard distributions are not.
//
// Stream construction: substream(seed, i) finalizes seed ^ (GOLDEN * (i+1))
// through the SplitMix64 output mix and uses the result as the stream's
// initial state. Per-row substreams make parallel generation equal sequential
// generation.

#include <cmath>
#include <cstdint>
#include <vector>

namespace conset {

namespace detail {
inline std::uint64_t sm64_mix(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}
inline constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;
}  // namespace detail

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(detail::sm64_mix(seed + detail::kGolden)) {}

  // Independent stream for counter i under the same seed.
  static Rng substream(std::uint64_t seed, std::uint64_t i) {
    Rng r(0);
    r.state_ = detail::sm64_mix(seed ^ (detail::kGolden * (i + 1)));
    return r;
  }

  std::uint64_t next_u64() {
    state_ += detail::kGolden;
    return detail::sm64_mix(state_);
  }

  // Uniform in [0, 1), 53 mantissa bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  bool bernoulli(double p) { return uniform() < p; }

  // Uniform integer in [0, n). Modulo bias is irrelevant at the n used here
  // and keeps the scheme trivially portable.
  std::uint64_t uniform_int(std::uint64_t n) { return next_u64() % n; }

  // Box-Muller; consumes two uniforms per pair, second value cached.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  double gumbel() {
    double u = uniform();
    while (u <= 0.0) u = uniform();
    return -std::log(-std::log(u));
  }

  // Index draw from unnormalized non-negative weights via inverse CDF.
  std::size_t categorical(const std::vector<double>& weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    double u = uniform() * total;
    for (std::size_t j = 0; j + 1 < weights.size(); ++j) {
      u -= weights[j];
      if (u < 0.0) return j;
    }
    return weights.empty() ? 0 : weights.size() - 1;
  }

  // Fisher-Yates shuffle of an index vector.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace conset
