#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace countfuse {

// splitmix64 step, used to derive independent seed streams.
inline std::uint64_t mix_seed(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  return mix_seed(base ^ mix_seed(stream + 0x632be59bd9b4e019ULL));
}

// mt19937_64 with hand-rolled transforms. The engine's output sequence is
// fixed by the standard; std::*_distribution are not, so we avoid them to
// keep seeded runs reproducible across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  // uniform on (0,1)
  double uniform() {
    return (static_cast<double>(gen_() >> 11) + 0.5) * 0x1.0p-53;
  }

  // standard normal, Box-Muller (cosine branch only)
  double normal() {
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  // Poisson by sequential inversion; large means split into chunks so the
  // running product never underflows.
  long poisson(double lambda) {
    if (lambda <= 0.0) return 0;
    long total = 0;
    while (lambda > 30.0) {
      const int chunks = static_cast<int>(std::ceil(lambda / 30.0));
      const double part = lambda / chunks;
      for (int c = 0; c < chunks; ++c) total += poisson_small(part);
      return total;
    }
    return total + poisson_small(lambda);
  }

  std::uint64_t raw() { return gen_(); }

 private:
  long poisson_small(double lambda) {
    const double limit = std::exp(-lambda);
    long k = 0;
    double prod = uniform();
    while (prod > limit) {
      ++k;
      prod *= uniform();
    }
    return k;
  }

  std::mt19937_64 gen_;
};

}  // namespace countfuse
