#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "storm/core/rng.hpp"
#include "storm/model/attention.hpp"

namespace storm::inline STORM_PREC_NS {

struct MaskPlan {
  double ratio = 0.75;
  std::uint64_t seed = 0;
  std::vector<std::size_t> masked;     // sorted token ids
  std::vector<std::uint8_t> visible;   // per token, 1 = visible
};

// Uniform subset of round(ratio * n) tokens, without replacement.
MaskPlan make_mask(std::size_t n_tokens, double ratio, std::uint64_t seed);

// One attention window: row-softmax probabilities plus the spatial
// (same frame) and temporal (same site, other frame) index sets per row.
struct StrdContext {
  std::size_t n = 0;
  std::vector<double> probs;  // [n, n]
  std::vector<std::vector<std::size_t>> omega_s, omega_t;
};

// probs: [n, n] row-softmax of the window logits. frame/site: per slot, -1
// for slots that are not eligible (padding, masked tokens, prompts); those
// never enter an index set and get empty sets themselves.
StrdContext make_strd_context(std::span<const double> probs, std::span<const std::int64_t> frame,
                              std::span<const std::int64_t> site);

// Row softmax with -inf entries mapping to 0 (all -inf rows give zeros).
std::vector<double> row_softmax(std::span<const double> logits, std::size_t n);

struct MatchingProbabilities {
  double f_spat = 0.0;
  double f_temp = 0.0;
};

// Maxima of row i over its spatial and temporal sets. Throws a contract
// error naming the row when either set is empty.
MatchingProbabilities matching_probabilities(const StrdContext& ctx, std::size_t i);

// Dropout probabilities per entry:
//   W_ij = 1/2 (f_temp(i) P_ij / sum_{Omega_s(i)} P + f_spat(i) P_ij / sum_{Omega_t(i)} P)
// for j in Omega_s(i) u Omega_t(i), zero elsewhere and on the diagonal.
// Rows with an empty set are zero. Entries may exceed 1 when a set's mass
// is small relative to the other set's maximum.
std::vector<double> dropout_probabilities(const StrdContext& ctx);

// Sets logits[i] to -inf with probability min(W[i], 1). `dropped` receives
// the number of removed entries.
std::vector<double> apply_strd(std::span<const double> logits, std::span<const double> w,
                               Rng& rng, std::size_t* dropped = nullptr);

struct StrdStats {
  double weight_sum = 0.0;      // sum of W over eligible entries
  std::size_t eligible = 0;     // entries j in Omega_s(i) u Omega_t(i)
  std::size_t dropped = 0;
  double omega_mass_sum = 0.0;  // final attention mass on Omega_s u Omega_t
  std::size_t queries = 0;      // rows contributing to omega_mass_sum

  double mean_weight() const { return eligible ? weight_sum / static_cast<double>(eligible) : 0.0; }
  double drop_rate() const { return eligible ? static_cast<double>(dropped) / static_cast<double>(eligible) : 0.0; }
  double omega_mass() const { return queries ? omega_mass_sum / static_cast<double>(queries) : 0.0; }
};

// Attention hook applying STRD to every (window, head) score block. With
// enabled = false it only records statistics and leaves attention intact.
class StrdHook final : public AttentionHook {
 public:
  StrdHook(bool enabled, Rng rng) : enabled_(enabled), rng_(rng) {}

  void drop(const AttentionWindows& geometry, std::span<const Scalar> probs,
            std::span<std::uint8_t> drop) override;
  void observe(const AttentionWindows& geometry, std::span<const Scalar> probs) override;

  const StrdStats& stats() const { return stats_; }

 private:
  bool enabled_;
  Rng rng_;
  StrdStats stats_;
};

}  // namespace storm::inline STORM_PREC_NS
