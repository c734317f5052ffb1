#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace dmse {

/// SplitMix64 finalizer; used to derive independent seeds.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  return mix64(mix64(seed) ^ mix64(index + 0x632be59bd9b4e019ULL));
}

/// Named substream ("init", "shuffle", "sampler", "synth", ...).
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (char c : stream) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return derive_seed(seed, h);
}

/// Random source whose output depends only on the seed. std::mt19937_64 is
/// fully specified by the standard; the std distributions are not, so the
/// variates below are built directly from the raw 64-bit stream.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform on the open interval (0, 1).
  double uniform() {
    return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal();

  /// Exponential with unit rate.
  double exponential();

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    // Lemire-free rejection; n is small in every caller.
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace dmse
