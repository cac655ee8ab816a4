#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string>
#include <string_view>

namespace ma2ml {

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t fnv1a64(std::string_view bytes);

/// Seed of the named substream `name` under `root`. Streams with different
/// names are statistically independent; the mapping is stable across builds.
std::uint64_t derive_seed(std::uint64_t root, std::string_view name);

/// Hash-mixes a sequence of 64-bit words into a uniform double in [0, 1).
double hash_uniform(std::uint64_t seed, std::initializer_list<std::uint64_t> words);

// Seeded random source. Distribution code is written here rather than taken
// from <random> so draws are identical across standard library vendors.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform in [0, n). Requires n > 0.
  std::uint64_t uniform_index(std::uint64_t n);

  double normal();

  std::string state() const;
  void restore(const std::string& state);

 private:
  std::mt19937_64 engine_;
};

}  // namespace ma2ml
