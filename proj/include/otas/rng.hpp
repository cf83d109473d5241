#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace otas {

/// Seeded generator with distribution code that does not depend on the
/// standard library's unspecified algorithms, so datasets and weight
/// initializations reproduce across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do x = engine_(); while (x >= limit);
    return x % n;
  }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1;
    do u1 = uniform(); while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * std::numbers::pi * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  double lognormal(double mu, double sigma) { return std::exp(normal(mu, sigma)); }

  bool bernoulli(double p) { return uniform() < p; }

  /// Derive an independent stream, e.g. one per video.
  Rng fork(std::uint64_t salt) {
    std::uint64_t s = engine_() ^ (salt * 0x9E3779B97F4A7C15ull);
    return Rng(s);
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace otas
