#ifndef FKEE_RNG_HPP
#define FKEE_RNG_HPP

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace fkee {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// uniform in (0,1]; never returns 0 so log() below is safe
inline double u64_to_unit(std::uint64_t x) {
  return (static_cast<double>(x >> 11) + 1.0) * 0x1.0p-53;
}

// Counter-based Gaussian noise: the increment for (path, step, dim) depends
// only on the key, so replaying a seed re-drives identical Brownian motions
// regardless of evaluation order or parallel layout.
class NoiseSource {
 public:
  explicit NoiseSource(std::uint64_t seed) : seed_(seed) {}

  // standard normal draw for the given counter triple
  double normal(std::uint64_t path, std::uint64_t step, std::uint64_t dim) const {
    std::uint64_t k = splitmix64(seed_ ^ (0xD1B54A32D192ED03ull * (path + 1)));
    k = splitmix64(k ^ (0x8CB92BA72F3D8DD7ull * (step + 1)));
    k = splitmix64(k ^ (0xABCDEF0123456789ull * (dim + 1)));
    const double u1 = u64_to_unit(k);
    const double u2 = u64_to_unit(splitmix64(k));
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  // Brownian increment over a step of length h
  double dW(std::uint64_t path, std::uint64_t step, std::uint64_t dim, double h) const {
    return std::sqrt(h) * normal(path, step, dim);
  }

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
};

// sequential RNG for everything that is not path noise (init, samplers)
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(splitmix64(seed ^ 0x5851F42D4C957F2Dull)) {}

  double uniform() { return u64_to_unit(gen_()); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal() {
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }
  std::uint64_t next_u64() { return gen_(); }
  // unbiased integer in [0, n)
  std::uint64_t below(std::uint64_t n) {
    std::uniform_int_distribution<std::uint64_t> d(0, n - 1);
    return d(gen_);
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace fkee

#endif
