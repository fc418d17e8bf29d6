#pragma once

#include <cassert>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace shiftlab::rng {

// One SplitMix64 step: advance by the golden-ratio increment, scramble, return.
// Output sequence is fully specified, so seeded fixtures are portable across
// platforms and standard-library versions.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// All randomness in the library flows through named streams. A stream is a
// SplitMix64 generator seeded by hashing (root seed, purpose, a, b), so the
// draw order of one stream never affects another.
enum class Purpose : std::uint64_t {
  WeightInit = 1,
  HeadInit = 2,
  ShiftInit = 3,
  BatchShuffle = 4,
  FinetuneShuffle = 5,
  ModelChoice = 6,
  ClassMeans = 7,
  SourceTrainNoise = 8,
  SourceEvalNoise = 9,
  TargetTrainNoise = 10,
  TargetEvalNoise = 11,
  Instance = 12,
  Pretrain = 13,
  HeadPhaseShuffle = 14,
};

inline std::uint64_t hash_combine(std::uint64_t h, std::uint64_t x) {
  return splitmix64(h ^ (x + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2)));
}

inline std::uint64_t derive(std::uint64_t root, Purpose purpose,
                            std::uint64_t a = 0, std::uint64_t b = 0) {
  std::uint64_t h = splitmix64(root);
  h = hash_combine(h, static_cast<std::uint64_t>(purpose));
  h = hash_combine(h, a);
  h = hash_combine(h, b);
  return h;
}

class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1), 53-bit resolution.
  double next_double() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  // Standard normal via Box-Muller on explicit uniforms; two draws per call,
  // no cached spare, so the stream position is a pure function of call count.
  double next_normal() {
    double u1 = 1.0 - next_double();  // (0, 1]
    double u2 = next_double();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  // Uniform integer in [0, bound), unbiased by rejection.
  std::uint64_t next_below(std::uint64_t bound) {
    assert(bound >= 1);
    const std::uint64_t threshold = (0 - bound) % bound;  // 2^64 mod bound
    for (;;) {
      const std::uint64_t r = next();
      if (r >= threshold) return r % bound;
    }
  }

  // Fisher-Yates.
  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(next_below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::uint64_t state_;
};

}  // namespace shiftlab::rng
