#pragma once

#include <cstdint>

#include "storm/core/precision.hpp"

namespace storm::inline STORM_PREC_NS {

// Counter-based generator: the n-th draw is a pure function of
// (key, n), and key is derived from (seed, stream). Splitting yields an
// independent stream without touching the parent's counter.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  Rng split(std::uint64_t stream) const;

  std::uint64_t next_u64();
  // Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  double normal();
  bool bernoulli(double p) { return uniform() < p; }

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

std::uint64_t mix64(std::uint64_t x);

}  // namespace storm::inline STORM_PREC_NS
