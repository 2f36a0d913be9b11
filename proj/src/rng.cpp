#include "distdpo/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace distdpo {
namespace {

std::uint64_t splitmix64(std::uint64_t& x) {
  x += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t mix_key(std::uint64_t id, std::uint64_t key) {
  std::uint64_t x = id ^ (key * 0xd1342543de82ef95ULL + 0x2545f4914f6cdd1dULL);
  return splitmix64(x);
}

std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

RngStream::RngStream(std::uint64_t seed) : id_(seed) {
  std::uint64_t x = seed;
  id_ = splitmix64(x);
  seed_state();
}

void RngStream::seed_state() {
  std::uint64_t x = id_;
  for (auto& w : s_) w = splitmix64(x);
}

RngStream RngStream::split(std::uint64_t key) const {
  RngStream child(*this);
  child.id_ = mix_key(id_, key);
  child.seed_state();
  return child;
}

RngStream RngStream::split(std::uint64_t k1, std::uint64_t k2) const {
  return split(k1).split(k2);
}

RngStream RngStream::split(std::uint64_t k1, std::uint64_t k2, std::uint64_t k3) const {
  return split(k1).split(k2).split(k3);
}

std::uint64_t RngStream::next_u64() {
  const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
  const std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double RngStream::uniform01() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::uniform(double lo, double hi) {
  return lo + (hi - lo) * uniform01();
}

std::uint64_t RngStream::uniform_int(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("uniform_int needs a positive range");
  const std::uint64_t limit = n * (UINT64_MAX / n);
  std::uint64_t v;
  do {
    v = next_u64();
  } while (v >= limit);
  return v % n;
}

double RngStream::normal() {
  const double u1 = 1.0 - uniform01();  // (0, 1]
  const double u2 = uniform01();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

int RngStream::categorical(std::span<const double> probs) {
  if (probs.empty()) throw std::invalid_argument("categorical needs at least one outcome");
  double total = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0)) throw std::invalid_argument("categorical probabilities must be nonnegative");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9)
    throw std::invalid_argument("categorical probabilities must sum to 1");
  const double u = uniform01() * total;
  double acc = 0.0;
  int last_positive = -1;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] > 0.0) last_positive = static_cast<int>(i);
    acc += probs[i];
    if (u < acc) return static_cast<int>(i);
  }
  return last_positive;
}

}  // namespace distdpo
