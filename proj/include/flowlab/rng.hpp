#pragma once
// Counter-based deterministic PRNG. Every stream is a pure function of
// (seed, counter), so runs replay bit-for-bit and substreams can be forked
// without sharing mutable state.

#include <cmath>
#include <cstdint>

namespace flowlab {

// SplitMix64 output finalizer; bijective on 64-bit words.
inline std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed) {}

  // n-th word of the stream is mix64(seed + n*golden); equivalent to the
  // sequential SplitMix64 generator but addressable by counter.
  std::uint64_t next_u64() { return mix64(seed_ + (++counter_) * kGolden); }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform in (0, 1]; safe as a log argument.
  double uniform_pos() { return double((next_u64() >> 11) + 1) * 0x1.0p-53; }

  // Standard normal via Box-Muller. Consumes exactly two words per call and
  // discards the paired sine variate so draw counts stay position-independent.
  double normal() {
    double u1 = uniform_pos();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
  }

  // Uniform integer in [0, n) via 128-bit multiply-shift.
  std::uint64_t below(std::uint64_t n) {
    return std::uint64_t((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  // Independent substream addressed by tag; does not advance this stream.
  Rng fork(std::uint64_t tag) const {
    return Rng(mix64(seed_ ^ (kGolden * (2 * tag + 1))));
  }

  std::uint64_t seed() const { return seed_; }

 private:
  static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;
  static constexpr double kPi = 3.14159265358979323846;
  std::uint64_t seed_ = 0;
  std::uint64_t counter_ = 0;
};

}  // namespace flowlab
