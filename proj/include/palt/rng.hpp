#pragma once

#include <cstdint>
#include <random>

namespace palt {

/// Seeded generator; every random draw in a run flows from one of these.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Independent child stream derived from a base seed and a stream id.
  static Rng derive(std::uint64_t seed, std::uint64_t stream);

  /// Uniform integer in [0, bound).
  std::int64_t uniform_int(std::int64_t bound);
  double uniform();
  double normal(double mean, double stddev);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace palt
