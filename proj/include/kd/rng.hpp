#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace kd {

// Deterministic PRNG with self-contained distributions. All randomness in
// the project flows from one root seed through named child streams, so
// adding or removing a consumer never shifts another consumer's stream.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(splitmix(seed ^ 0x9e3779b97f4a7c15ull)) {}

  std::uint64_t next_u64() {
    // xorshift64* on a splitmix-initialized state
    std::uint64_t x = state_;
    x ^= x >> 12;
    x ^= x << 25;
    x ^= x >> 27;
    state_ = x;
    return x * 0x2545f4914f6cdd1dull;
  }

  // uniform in [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // inclusive integer range
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<std::int64_t>(next_u64() % span);
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Box-Muller, spare value cached
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double t = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(t);
    has_spare_ = true;
    return r * std::cos(t);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Named substream: hash the tag into the seed (FNV-1a) so streams are
  // independent of each other and of consumer ordering.
  static Rng child(std::uint64_t seed, std::string_view tag) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (char c : tag) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001b3ull;
    }
    return Rng(splitmix(seed) ^ h);
  }

 private:
  static std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
  }

  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace kd
