#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace aifml {

// Seeded random stream with hand-rolled draws. The mt19937_64 engine sequence
// is pinned by the standard; the std distributions are not, so we roll our own
// to keep generated files byte-identical across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next() { return eng_(); }

  // Uniform in [0,1) with 53 bits of mantissa.
  double uniform() {
    return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n) {
    // Rejection sampling to kill modulo bias.
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v = eng_();
    while (v >= limit) v = eng_();
    return v % n;
  }

  bool chance(double p) { return uniform() < p; }

  double normal(double mean = 0.0, double stddev = 1.0) {
    // Box-Muller; one value per call keeps the stream position obvious.
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    return mean + stddev * r * std::cos(6.283185307179586 * u2);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[below(i)]);
    }
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace aifml
