#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "disgenib/tensor.hpp"

namespace dgib {

// Seeded random stream. Substreams are derived from the construction seed
// (not the current engine state) and a purpose label, so "init", "noise" and
// "sampling" streams stay independent and reproducible no matter how many
// draws the parent has made.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t seed() const { return seed_; }

  Rng substream(std::string_view purpose) const;
  Rng substream(std::string_view purpose, std::uint64_t index) const;

  double normal();
  // Uniform on [lo, hi).
  double uniform(double lo = 0.0, double hi = 1.0);
  // Uniform integer in [0, n).
  std::size_t index(std::size_t n);

  Array normal_array(Shape shape);
  Array uniform_array(Shape shape, double lo, double hi);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

// splitmix64 finalizer; used to mix seeds with purpose labels.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt);

}  // namespace dgib
