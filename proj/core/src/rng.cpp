#include "disgenib/rng.hpp"

namespace dgib {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

namespace {

// FNV-1a; std::hash<string_view> is not stable across standard libraries.
std::uint64_t label_hash(std::string_view label) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : label) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

Rng::Rng(std::uint64_t seed) : seed_(seed), engine_(mix_seed(seed, 0)) {}

Rng Rng::substream(std::string_view purpose) const { return Rng(mix_seed(seed_, label_hash(purpose))); }

Rng Rng::substream(std::string_view purpose, std::uint64_t index) const {
  return Rng(mix_seed(mix_seed(seed_, label_hash(purpose)), index));
}

double Rng::normal() { return normal_(engine_); }

double Rng::uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }

std::size_t Rng::index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_); }

Array Rng::normal_array(Shape shape) {
  Array out = Array::zeros(std::move(shape));
  for (double& v : out.data()) v = normal();
  return out;
}

Array Rng::uniform_array(Shape shape, double lo, double hi) {
  Array out = Array::zeros(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (double& v : out.data()) v = dist(engine_);
  return out;
}

}  // namespace dgib
