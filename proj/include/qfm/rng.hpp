#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace qfm {

// Seedable 64-bit generator. Components never share a stream: each one takes
// its own child via split(tag), so adding draws in one place does not shift
// the sequence seen by another.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t seed() const { return seed_; }

  // Child generator whose seed is a hash of (this seed, tag).
  Rng split(std::string_view tag) const;
  Rng split(std::uint64_t index) const;

  std::uint64_t next_u64() { return engine_(); }
  float uniform(float lo = 0.0f, float hi = 1.0f);
  float normal(float mean = 0.0f, float stddev = 1.0f);
  // Normal resampled until it falls within +-2 stddev of the mean.
  float truncated_normal(float stddev);
  std::size_t index(std::size_t n);
  bool bernoulli(double p);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace qfm
