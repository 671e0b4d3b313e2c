// SPDX-License-Identifier: Apache-2.0
#include "mozolab/rng.hpp"

#include <cmath>

namespace mozolab {

std::uint64_t mix_seed(std::uint64_t base, std::uint64_t tag) {
  // splitmix64 finalizer over base ^ rotated tag
  std::uint64_t z = base ^ (tag * 0x9E3779B97F4A7C15ULL);
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double Rng::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::gaussian() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // Box-Muller; u1 shifted away from zero so log() stays finite.
  double u1 = uniform();
  double u2 = uniform();
  if (u1 <= 0.0) u1 = 0x1.0p-53;
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * 3.14159265358979323846 * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

double Rng::rademacher() {
  return (engine_() & 1u) ? 1.0 : -1.0;
}

std::uint32_t Rng::below(std::uint32_t n) {
  // rejection sampling on the top 32 bits, no modulo bias
  const std::uint64_t limit = (0x100000000ULL / n) * n;
  for (;;) {
    const std::uint64_t x = engine_() >> 32;
    if (x < limit) return static_cast<std::uint32_t>(x % n);
  }
}

}  // namespace mozolab
