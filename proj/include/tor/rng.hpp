#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>

namespace tor::rng {

// splitmix64 step (Steele, Lea, Flood 2014). Used both as a generator and as
// a seed mixer so that derived streams are decorrelated from their indices.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ull;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Collapses a seed plus any number of stream indices into one 64-bit seed.
inline std::uint64_t mix(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t state = 0x243f6a8885a308d3ull;  // pi digits, arbitrary nonzero
  for (std::uint64_t part : parts) {
    state ^= splitmix64(state) + part;
    (void)splitmix64(state);
  }
  return splitmix64(state);
}

// Deterministic stream of uniform and gaussian variates. Every consumer of
// randomness in the engine owns a Stream derived from (runSeed, indices...),
// so reordering one consumer never perturbs another.
class Stream {
 public:
  explicit Stream(std::uint64_t seed) : state_(seed) {}

  std::uint64_t nextU64() { return splitmix64(state_); }

  // Uniform double in [0, 1) with 53 random bits, identical on any platform
  // with IEEE-754 doubles.
  double nextUnit() { return static_cast<double>(nextU64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, bound). Multiply-shift keeps the draw branch-free;
  // the tiny modulo bias is irrelevant here, determinism is what matters.
  int nextInt(int bound) {
    return static_cast<int>((static_cast<unsigned __int128>(nextU64()) *
                             static_cast<unsigned __int128>(bound)) >>
                            64);
  }

  // Standard normal via Box-Muller, one spare cached.
  double nextGaussian() {
    if (haveSpare_) {
      haveSpare_ = false;
      return spare_;
    }
    double u = 0.0;
    while (u == 0.0) {
      u = nextUnit();
    }
    double v = nextUnit();
    double radius = std::sqrt(-2.0 * std::log(u));
    double angle = 6.283185307179586476925286766559 * v;
    spare_ = radius * std::sin(angle);
    haveSpare_ = true;
    return radius * std::cos(angle);
  }

 private:
  std::uint64_t state_ = 0;
  double spare_ = 0.0;
  bool haveSpare_ = false;
};

}  // namespace tor::rng
