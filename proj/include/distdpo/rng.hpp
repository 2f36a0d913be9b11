#pragma once

#include <array>
#include <cstdint>
#include <span>

namespace distdpo {

// Deterministic splittable RNG. A stream is identified by a 64-bit id derived
// from the root seed and the chain of split keys, so substreams depend only on
// (seed, key path) and never on how many draws other streams have consumed.
// Draws use xoshiro256++ seeded from the id; all distributions are implemented
// here so sequences are stable across platforms and standard libraries.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed);

  RngStream split(std::uint64_t key) const;
  RngStream split(std::uint64_t k1, std::uint64_t k2) const;
  RngStream split(std::uint64_t k1, std::uint64_t k2, std::uint64_t k3) const;

  std::uint64_t stream_id() const { return id_; }

  std::uint64_t next_u64();

  // Uniform on [0,1) with 53 random bits.
  double uniform01();
  double uniform(double lo, double hi);

  // Unbiased uniform draw from {0, ..., n-1}; n must be positive.
  std::uint64_t uniform_int(std::uint64_t n);

  // Standard normal via Box-Muller; consumes exactly two uniforms per call.
  double normal();

  // Index draw from a probability vector (entries nonnegative, sum ~ 1).
  int categorical(std::span<const double> probs);

 private:
  std::uint64_t id_;
  std::array<std::uint64_t, 4> s_;

  void seed_state();
};

// Fixed stream-purpose keys. Keeping them in one place avoids accidental
// collisions between modules deriving substreams from the same root.
namespace stream_key {
inline constexpr std::uint64_t kInstance = 0x01;
inline constexpr std::uint64_t kBehaviorData = 0x02;
inline constexpr std::uint64_t kClientSelect = 0x03;
inline constexpr std::uint64_t kLocalStep = 0x04;
inline constexpr std::uint64_t kStaleness = 0x05;
inline constexpr std::uint64_t kMonteCarlo = 0x06;
inline constexpr std::uint64_t kInit = 0x07;
inline constexpr std::uint64_t kSweep = 0x08;
inline constexpr std::uint64_t kSharedClient = 0xFFFF;
}  // namespace stream_key

}  // namespace distdpo
