#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "storm/io/volume.hpp"
#include "storm/model/attention.hpp"
#include "storm/model/ssm.hpp"
#include "storm/model/window.hpp"

namespace storm::inline STORM_PREC_NS {

enum class MixerKind { kSsm, kAttention };

struct EncoderConfig {
  std::string variant = "Base";
  Grid4 patch{1, 2, 2, 2};
  std::size_t embed_dim = 24;
  std::vector<std::size_t> depths{1, 1, 2, 1};
  Grid4 window{4, 4, 4, 4};
  std::size_t d_state = 8;
  std::size_t mlp_ratio = 4;
  std::size_t head_dim = 12;
  // Leading stages that mix with windowed attention instead of the SSM.
  std::size_t attention_stages = 1;
  std::uint64_t seed = 0;

  std::size_t n_stages() const { return depths.size(); }
  std::size_t stage_dim(std::size_t s) const { return embed_dim << s; }
  std::size_t out_dim() const { return stage_dim(n_stages() - 1); }
  MixerKind mixer(std::size_t s) const {
    return s < attention_stages ? MixerKind::kAttention : MixerKind::kSsm;
  }
  void validate() const;
};

// LowRes, LongSeq, Base or Large; unknown names are a config error.
EncoderConfig variant_config(const std::string& name);

// Volume4D payload as a [T, Z, Y, X] tensor.
Tensor volume_tensor(const Volume4D& v);

// Non-overlapping patch tiling of a volume, zero-padded up to a multiple of
// the patch size. voxels holds patch_len voxel indices per token (patch
// voxels in (t, z, y, x) order, -1 for padding); a token is valid if it
// covers at least one real voxel.
struct PatchGrid {
  Grid4 volume, patch, grid;
  ops::IndexList voxels;
  std::vector<std::uint8_t> valid;

  std::size_t n_tokens() const { return grid.total(); }
  std::size_t patch_len() const { return patch.total(); }
};

PatchGrid make_patch_grid(const Grid4& volume, const Grid4& patch);

// Gathers patch voxels: [T, Z, Y, X] -> [n_tokens, patch_len].
Tensor patchify(const Tensor& volume, const PatchGrid& pg);

// Fixed factorized sinusoidal encoding of (t, x, y, z) token coordinates,
// [grid.total(), dim]. Each axis gets 2*floor(dim/8) channels; leftover
// channels are zero.
Tensor positional_encoding(const Grid4& grid, std::size_t dim);

// Token sequence flowing through the encoder: rows [0, N) are grid tokens,
// rows [N, N + n_prompts) are prompt tokens. Inactive tokens (padding or
// masked) are carried along but never mixed with others.
struct TokenState {
  Tensor x;
  Grid4 grid;
  std::vector<std::uint8_t> active;
  std::size_t n_prompts = 0;

  std::size_t n_tokens() const { return grid.total(); }
};

// Learnable prompt tokens for the first stage plus one width projection per
// patch merge.
struct PromptSet {
  Tensor tokens;  // [k, C1]
  std::vector<Linear> merge_proj;

  std::size_t k() const { return tokens.defined() ? tokens.dim(0) : 0; }
};

struct SwmBlock {
  MixerKind kind = MixerKind::kSsm;
  bool shifted = false;
  bool reverse_scan = false;
  Grid4 window;
  LayerNorm norm1, norm2;
  AttentionMixer attn;
  SsmMixer ssm;
  Mlp mlp;

  SwmBlock() = default;
  SwmBlock(MixerKind kind, std::size_t dim, const EncoderConfig& cfg, bool odd, Rng& rng);

  void forward(TokenState& s, AttentionHook* hook) const;
  void zero_output_projections() const;
  void collect(const std::string& prefix, ParamList& params) const;
};

// Concatenates 2x2x2 spatial neighbours (time preserved), then
// LayerNorm(8C) and a bias-free projection 8C -> 2C. Odd dims are padded.
struct PatchMerge {
  LayerNorm norm;
  Linear reduce;

  PatchMerge() = default;
  PatchMerge(std::size_t dim, Rng& rng);

  TokenState forward(const TokenState& s) const;
  void collect(const std::string& prefix, ParamList& params) const;
};

struct ForwardOptions {
  // Per stage-1 token, 1 = visible. Hidden tokens get zero content and do
  // not take part in mixing.
  const std::vector<std::uint8_t>* visible = nullptr;
  const PromptSet* prompts = nullptr;
  AttentionHook* hook = nullptr;
};

struct EncoderOutput {
  std::vector<TokenState> stages;  // per-stage output before merging
  Tensor features;                 // [1, C_last], mean of normalized active tokens
};

class Encoder {
 public:
  explicit Encoder(EncoderConfig config);

  const EncoderConfig& config() const { return config_; }
  const ParamList& params() const { return params_; }
  std::size_t param_count() const;

  EncoderOutput forward(const Tensor& volume, const ForwardOptions& options = {}) const;

  Linear embed;
  std::vector<std::vector<SwmBlock>> stages;
  std::vector<PatchMerge> merges;
  LayerNorm norm;

 private:
  EncoderConfig config_;
  ParamList params_;
};

}  // namespace storm::inline STORM_PREC_NS
