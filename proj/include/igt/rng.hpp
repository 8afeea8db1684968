#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace igt {

// Deterministic RNG used everywhere randomness is needed. All derived draws
// (uniforms, normals) are computed from raw mt19937_64 output with explicit
// arithmetic so streams are reproducible independent of the C++ standard
// library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1) with 53 bits of precision.
  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  // Uniform integer in [0, n). n must be positive.
  int uniform_int(int n) {
    return static_cast<int>(static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(gen_()) * static_cast<unsigned>(n)) >> 64));
  }

  // Standard normal via Box-Muller, one spare cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  float normal_f(float mean, float stddev) {
    return mean + stddev * static_cast<float>(normal());
  }

 private:
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace igt
