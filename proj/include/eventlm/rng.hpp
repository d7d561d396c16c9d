#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

// Counter-based splittable PRNG (splitmix64 finalizer over key + counter).
// State is two u64s, so streams serialize exactly and split() derives
// independent child streams without touching the parent. Every stochastic
// choice in the system (init, masking, noise, sampling) draws from one of
// these, keyed from the config seed.
namespace eventlm {

class Rng {
 public:
  Rng() : Rng(0) {}
  explicit Rng(std::uint64_t seed) : key_(mix64(seed ^ 0x2545f4914f6cdd1dull)) {}

  static Rng restore(std::uint64_t key, std::uint64_t counter) {
    Rng r;
    r.key_ = key;
    r.counter_ = counter;
    return r;
  }

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

  // Child stream identified by tag; parent state is not advanced.
  Rng split(std::uint64_t tag) const {
    Rng r;
    r.key_ = mix64(key_ ^ mix64(tag + 0x9e3779b97f4a7c15ull));
    r.counter_ = 0;
    return r;
  }

  std::uint64_t next_u64() {
    std::uint64_t z = key_ + (++counter_) * 0x9e3779b97f4a7c15ull;
    return mix64(z);
  }

  // Uniform in [0,1), 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Unbiased integer in [0,n).
  std::uint64_t below(std::uint64_t n) {
    std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  // Box-Muller without pair caching: costs one extra transcendental but keeps
  // the serializable state to exactly (key, counter).
  double gaussian() {
    double u1 = 1.0 - uniform();  // (0,1], log stays finite
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  double gaussian(double mean, double stddev) { return mean + stddev * gaussian(); }

 private:
  static std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

}  // namespace eventlm
