// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>

namespace mozolab {

/// Mixes a base seed with a stream tag into a new seed. Used to derive
/// independent, reproducible sub-streams (data, model init, probes, ...)
/// from one run seed.
std::uint64_t mix_seed(std::uint64_t base, std::uint64_t tag);

/// Deterministic random source. All derived draws (uniforms, Gaussians)
/// are generated from explicit integer output of mt19937_64, so the same
/// seed yields the same sequence on every platform and standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform double in [0, 1), 53 bits of randomness.
  double uniform();

  /// Standard normal via Box-Muller (second value cached).
  double gaussian();

  /// -1.0 or +1.0 with equal probability.
  double rademacher();

  /// Unbiased integer in [0, n). n must be > 0.
  std::uint32_t below(std::uint32_t n);

  /// Independent stream derived from this generator's seed and a tag.
  /// Does not consume state.
  Rng fork(std::uint64_t tag) const { return Rng(mix_seed(seed_, tag)); }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace mozolab
