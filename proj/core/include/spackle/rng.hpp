#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace spackle {

inline constexpr std::uint64_t kDefaultSeed = 42;

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b) {
  return splitmix64(a ^ splitmix64(b));
}

// FNV-1a over a label; used to derive independent streams from one seed.
constexpr std::uint64_t stream_id(std::string_view name) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : name) {
    h ^= static_cast<std::uint64_t>(static_cast<unsigned char>(c));
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Stateless counter-based generator. value = f(seed, stream, counter), so
// parallel workers can evaluate any counter in any order and still produce
// schedule-independent results.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint64_t stream)
      : key_(hash_combine(seed, stream)) {}
  CounterRng(std::uint64_t seed, std::string_view stream)
      : CounterRng(seed, stream_id(stream)) {}

  std::uint64_t bits(std::uint64_t counter) const {
    return splitmix64(key_ ^ splitmix64(counter));
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform(std::uint64_t counter) const {
    return static_cast<double>(bits(counter) >> 11) * 0x1.0p-53;
  }

  bool bernoulli(double p, std::uint64_t counter) const {
    return uniform(counter) < p;
  }

  // Uniform integer in [0, n). n must be positive; modulo bias is < 2^-53
  // for the n used here (dataset-sized), which is irrelevant in practice.
  std::uint64_t uniform_int(std::uint64_t n, std::uint64_t counter) const {
    return static_cast<std::uint64_t>(uniform(counter) * static_cast<double>(n));
  }

 private:
  std::uint64_t key_;
};

// Small sequential generator for initialization paths. Self-contained so
// results are identical across standard libraries and platforms.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(splitmix64(seed ^ 0x5851f42d4c957f2dULL)) {}

  std::uint64_t next_u64() {
    state_ = splitmix64(state_);
    return state_;
  }

  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Box-Muller with a cached spare.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  std::uint64_t uniform_int(std::uint64_t n) {
    return static_cast<std::uint64_t>(uniform() * static_cast<double>(n));
  }

 private:
  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace spackle
