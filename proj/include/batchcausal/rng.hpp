#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace batchcausal {

// SplitMix64 finalizer; used to derive independent stream seeds.
std::uint64_t mix_seed(std::uint64_t x) noexcept;

// Derives a stream seed from a master seed and a textual stream id (e.g. a run id).
std::uint64_t derive_seed(std::uint64_t master, std::string_view stream_id) noexcept;

// Seeded random stream with platform-independent uniform and normal draws.
// std::normal_distribution is implementation-defined, so the transforms live here.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(mix_seed(seed)) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1) with 53 bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  // Standard normal via Box-Muller; caches the second draw.
  double normal();

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::mt19937_64 engine_;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

}  // namespace batchcausal
