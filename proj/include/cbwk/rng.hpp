#pragma once

#include <cstdint>
#include <limits>

namespace cbwk {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Sub-streams of one run. Each gets its own key so that, for a fixed seed,
/// the context sequence and the per-round conversion uniforms are the same
/// whatever policy is being simulated.
enum class Stream : std::uint64_t {
  Context = 1,
  Conversion = 2,
  Policy = 3,
  Instance = 4,
};

/// Counter-based generator: the i-th output is a pure function of
/// (seed, stream, i). Satisfies UniformRandomBitGenerator.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  CounterRng(std::uint64_t seed, Stream stream)
      : key_(splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(stream) *
                                          0xD1B54A32D192ED03ULL))) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()() { return at(counter_++); }

  result_type at(std::uint64_t counter) const {
    return splitmix64(key_ + counter * 0x9E3779B97F4A7C15ULL);
  }

  void seek(std::uint64_t counter) { counter_ = counter; }
  std::uint64_t position() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

/// Uniform double in [0, 1) with 53 random bits. Platform independent,
/// unlike std::uniform_real_distribution.
template <class Urbg>
double uniform01(Urbg& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace cbwk
