#pragma once

#include <cstdint>
#include <vector>

#include "npc/common.hpp"

namespace npc {

// Deterministic 64-bit generator (splitmix64 core). Distribution code is
// written out explicitly so streams are identical across standard libraries
// and platforms; reproducibility of whole runs depends on it.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1).
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, bound), bound > 0. Rejection-free modulo bias is
  // irrelevant at our bounds (<< 2^32) but use Lemire reduction anyway.
  std::uint64_t next_below(std::uint64_t bound) {
    __uint128_t m = static_cast<__uint128_t>(next_u64()) * bound;
    return static_cast<std::uint64_t>(m >> 64);
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  bool bernoulli(double p) { return next_double() < p; }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(next_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Derive an independent stream from a master seed and a purpose tag, so
  // e.g. weight init and batch order do not share a sequence.
  static Rng derive(std::uint64_t seed, std::uint64_t tag) {
    Rng mix(seed ^ (0x517cc1b727220a95ull * (tag + 1)));
    mix.next_u64();
    return Rng(mix.next_u64());
  }

 private:
  std::uint64_t state_;
};

// Stream tags used across the engine.
namespace rng_tag {
constexpr std::uint64_t kInit = 1;
constexpr std::uint64_t kBatchOrder = 2;
constexpr std::uint64_t kDropout = 3;
constexpr std::uint64_t kAugment = 4;
constexpr std::uint64_t kProbe = 5;
}  // namespace rng_tag

}  // namespace npc
