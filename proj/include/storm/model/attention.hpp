#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "storm/model/layers.hpp"

namespace storm::inline STORM_PREC_NS {

// Geometry of one batched windowed-attention call. Score tensors are laid
// out [n_windows, heads, len, len]. For each of the n_windows * len slots,
// frame and site give the token's time index and flattened spatial index,
// or -1 for slots that are not real, visible tokens (padding, masked
// tokens, prompts).
struct AttentionWindows {
  std::size_t n_windows = 0;
  std::size_t heads = 0;
  std::size_t len = 0;
  std::vector<std::int64_t> frame;
  std::vector<std::int64_t> site;
};

// Lets a caller intervene between the logits and the final softmax. `probs`
// is the row softmax of the logits with `drop` applied; setting drop[i] = 1
// removes entry i (its logit becomes -inf) before the final softmax.
class AttentionHook {
 public:
  virtual ~AttentionHook() = default;
  virtual void drop(const AttentionWindows& geometry, std::span<const Scalar> probs,
                    std::span<std::uint8_t> drop) = 0;
  // Final attention weights, after any drops.
  virtual void observe(const AttentionWindows& /*geometry*/, std::span<const Scalar> /*probs*/) {}
};

// Multi-head softmax attention within windows.
struct AttentionMixer {
  Linear qkv;
  Linear proj;
  std::size_t heads = 1;

  AttentionMixer() = default;
  AttentionMixer(std::size_t dim, std::size_t heads, Rng& rng);

  // x: [R, C] source rows. gather: n_windows * len row indices into x (-1
  // for padding). key_ok: per gather slot, whether it may be attended to.
  // Returns [n_windows * len, C], one row per slot.
  Tensor operator()(const Tensor& x, const ops::IndexList& gather,
                    const std::vector<std::uint8_t>& key_ok, const AttentionWindows& geometry,
                    AttentionHook* hook) const;
  void collect(const std::string& prefix, ParamList& params) const;
};

}  // namespace storm::inline STORM_PREC_NS
