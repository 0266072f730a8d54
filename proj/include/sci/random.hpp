#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

namespace sci {

// 64-bit FNV-1a over raw bytes. Used for label hashing and artifact digests.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t basis = 0xcbf29ce484222325ULL);
std::string digest_hex(std::uint64_t d);

std::uint64_t splitmix64(std::uint64_t& state);

// Deterministic xoshiro256** stream. Every sampler here is implemented
// locally so the produced values do not depend on the standard library's
// distribution implementations.
class RandomStream {
 public:
  RandomStream(std::uint64_t seed, std::string_view label);

  std::uint64_t seed() const noexcept { return seed_; }
  const std::string& label() const noexcept { return label_; }

  std::uint64_t next_u64();
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  bool bernoulli(double p) { return uniform() < p; }
  // Standard normal via Box-Muller (one draw per call).
  double normal();
  // Poisson: sequential-search inversion below rate 10, PTRS above.
  double poisson(double rate);

  // Child stream keyed on this stream's seed and a composed label.
  RandomStream child(std::string_view sublabel) const;

 private:
  std::uint64_t seed_;
  std::string label_;
  std::array<std::uint64_t, 4> s_{};
};

inline RandomStream derive_stream(std::uint64_t seed, std::string_view label) { return RandomStream(seed, label); }

}  // namespace sci
