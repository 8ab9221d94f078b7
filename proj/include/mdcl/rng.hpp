#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace mdcl {

// Deterministic random stream. Every consumer derives its own stream from a
// master seed and a stable name, so adding draws to one consumer never shifts
// the sequence seen by another. All transforms are hand-rolled on top of the
// raw 64-bit output, because std::uniform_real_distribution and friends are
// not bit-reproducible across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // Derives a child stream from a master seed and a purpose string.
  static Rng stream(std::uint64_t master_seed, const std::string& name);

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1): 53-bit mantissa of the raw draw.
  double uniform();

  // Uniform on [lo, hi).
  double uniform(double lo, double hi);

  // Unbiased integer on [0, n), n > 0, by rejection.
  std::uint64_t uniform_int(std::uint64_t n);

  // Integer on [lo, hi] inclusive.
  std::int64_t randint(std::int64_t lo, std::int64_t hi);

  // Standard normal via Box-Muller (both values used, in order).
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// 64-bit FNV-1a hash of a string; used to turn stream names into seed salt.
std::uint64_t fnv1a64(const std::string& s);

// splitmix64 finalizer; decorrelates nearby seeds.
std::uint64_t splitmix64(std::uint64_t x);

}  // namespace mdcl
