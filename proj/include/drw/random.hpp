#pragma once

#include <concepts>
#include <cstdint>
#include <random>

namespace drw {

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Child seed for stream `index` of `parent`; used to give every trial,
/// student and token its own reproducible generator.
constexpr std::uint64_t derive_seed(std::uint64_t parent,
                                    std::uint64_t index) noexcept {
  return splitmix64(splitmix64(parent) ^ (index * 0xd1b54a32d192ed03ULL));
}

/// 53-bit uniform in [0,1).
inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

template <class S>
concept UniformSource = requires(S& s) {
  { s.next_uniform() } -> std::convertible_to<double>;
};

/// Counter-based stream: draw i at position (seed, counter) is a pure
/// function of the triple, so a serving gateway can reproduce any
/// historical hard label from its request counter alone.
class CounterStream {
 public:
  CounterStream(std::uint64_t seed, std::uint64_t counter) noexcept
      : seed_(seed), counter_(counter) {}

  double next_uniform() noexcept {
    const std::uint64_t bits =
        splitmix64(derive_seed(seed_, counter_) + draw_++ * 0x2545f4914f6cdd1dULL);
    return static_cast<double>(bits >> 11) * 0x1.0p-53;
  }

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_;
  std::uint64_t draw_ = 0;
};

/// Adapter so std engines satisfy UniformSource.
class EngineStream {
 public:
  explicit EngineStream(std::uint64_t seed) : rng_(seed) {}
  double next_uniform() { return uniform01(rng_); }
  std::mt19937_64& engine() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

}  // namespace drw
