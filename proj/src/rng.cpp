#include "qfm/rng.hpp"

#include <cmath>

namespace qfm {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

Rng::Rng(std::uint64_t seed) : seed_(seed), engine_(splitmix64(seed)) {}

Rng Rng::split(std::string_view tag) const {
  // FNV-1a over the tag, folded into the parent seed.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : tag) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return Rng(splitmix64(seed_ ^ splitmix64(h)));
}

Rng Rng::split(std::uint64_t index) const {
  return Rng(splitmix64(seed_ + 0x632BE59BD9B4E019ULL * (index + 1)));
}

float Rng::uniform(float lo, float hi) {
  // 24 random mantissa bits, mapped to [lo, hi).
  const float u = static_cast<float>(engine_() >> 40) * (1.0f / 16777216.0f);
  return lo + (hi - lo) * u;
}

float Rng::normal(float mean, float stddev) {
  // Box-Muller over our own uniforms keeps streams identical across standard
  // library implementations.
  double u1 = 0.0;
  do {
    u1 = static_cast<double>(engine_() >> 11) * (1.0 / 9007199254740992.0);
  } while (u1 <= 0.0);
  const double u2 = static_cast<double>(engine_() >> 11) * (1.0 / 9007199254740992.0);
  const double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  return mean + stddev * static_cast<float>(z);
}

float Rng::truncated_normal(float stddev) {
  for (;;) {
    const float z = normal(0.0f, 1.0f);
    if (std::fabs(z) <= 2.0f) return z * stddev;
  }
}

std::size_t Rng::index(std::size_t n) {
  if (n <= 1) return 0;
  // Rejection sampling for an unbiased index.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t r = engine_();
  while (r >= limit) r = engine_();
  return static_cast<std::size_t>(r % n);
}

bool Rng::bernoulli(double p) {
  const double u = static_cast<double>(engine_() >> 11) * (1.0 / 9007199254740992.0);
  return u < p;
}

}  // namespace qfm
