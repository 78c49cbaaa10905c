#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace scod {

/// Independent random streams. Every draw in the project derives from
/// (seed, stream, index), so a run can be replayed from any step.
enum class RngStream : std::uint64_t {
  kDataOrder = 1,
  kView = 2,
  kFlip = 3,
  kInit = 4,
  kSynth = 5,
};

/// SplitMix64 finalizer over the triple; used to seed per-step engines.
std::uint64_t derive_seed(std::uint64_t seed, RngStream stream, std::uint64_t index);

/// Thin wrapper over mt19937_64 with distribution code that does not depend
/// on the standard library's (implementation-defined) distributions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  Rng(std::uint64_t seed, RngStream stream, std::uint64_t index)
      : engine_(derive_seed(seed, stream, index)) {}

  std::uint64_t next() { return engine_(); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [lo, hi] inclusive.
  std::int64_t integer(std::int64_t lo, std::int64_t hi);
  bool bernoulli(double p) { return uniform() < p; }
  double normal();

  std::mt19937_64& engine() { return engine_; }

  std::string state() const;
  void restore(const std::string& state);

 private:
  std::mt19937_64 engine_;
};

}  // namespace scod
