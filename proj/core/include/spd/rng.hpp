#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace spd {

// Deterministic, platform-independent random source (xoshiro256** over a
// splitmix64-expanded seed). The standard <random> distributions are
// implementation-defined, so everything that must reproduce bit-for-bit
// across toolchains goes through this class instead.
class Rng {
 public:
  explicit Rng(uint64_t seed);

  uint64_t next_u64();

  // Uniform in [0, 1) with 53 bits of mantissa.
  double uniform();
  // Uniform in [lo, hi).
  double uniform(double lo, double hi);
  // Uniform integer in [0, n). n must be > 0.
  uint64_t below(uint64_t n);
  // Uniform integer in [lo, hi] inclusive.
  int64_t range(int64_t lo, int64_t hi);
  // Standard normal via Box-Muller (deterministic pairing).
  double normal();

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  template <typename T>
  const T& pick(const std::vector<T>& v) {
    return v[static_cast<size_t>(below(v.size()))];
  }

  // Independent child stream: hashes the tag into the current state so
  // sibling streams do not correlate.
  Rng derive(const std::string& tag) const;
  Rng derive(uint64_t tag) const;

 private:
  uint64_t s_[4];
  double cached_normal_ = 0.0;
  bool has_cached_normal_ = false;
};

// 64-bit FNV-1a; used for hash-bag bucketing and stream derivation.
uint64_t fnv1a64(const void* data, size_t len, uint64_t basis = 14695981039346656037ull);
uint64_t fnv1a64(const std::string& s);

}  // namespace spd
