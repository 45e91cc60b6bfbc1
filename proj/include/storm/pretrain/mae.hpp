#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "storm/model/encoder.hpp"
#include "storm/pretrain/strd.hpp"

namespace storm::inline STORM_PREC_NS {

enum class LossNorm { kPerPatch, kNone };

struct MaeConfig {
  double mask_ratio = 0.75;
  bool strd = true;
  std::size_t decoder_depth = 2;
  std::size_t decoder_dim = 0;  // 0 selects the stage-2 width
  std::size_t decoder_mlp_ratio = 2;
  MixerKind decoder_mixer = MixerKind::kAttention;
  Grid4 decoder_window{2, 2, 2, 2};
  LossNorm loss_norm = LossNorm::kPerPatch;
};

// Per-patch target normalization: (x - mean) / sqrt(var + eps), population
// statistics over the patch voxels.
inline constexpr double kPatchNormEps = 1e-6;
Tensor normalize_patches(const Tensor& patches);

// Mean squared error over the listed rows of prediction and target.
Tensor masked_patch_loss(const Tensor& prediction, const Tensor& target,
                         const std::vector<std::size_t>& rows);

struct MaeResult {
  Tensor loss;
  Tensor prediction;  // [n_tokens, patch_len]
  Tensor target;      // normalized targets, [n_tokens, patch_len]
  StrdStats strd;
};

// Masked autoencoder around an Encoder. The decoder sees stage-1 features
// of visible tokens, a learned mask token at hidden positions, upsampled
// last-stage features and a fixed positional encoding, then runs decoder blocks
// over the full token grid and predicts patch voxels.
class MaeModel {
 public:
  MaeModel(EncoderConfig encoder, MaeConfig mae);

  const Encoder& encoder() const { return *encoder_; }
  Encoder& encoder() { return *encoder_; }
  const MaeConfig& config() const { return config_; }
  std::size_t decoder_dim() const { return dec_dim_; }

  // Encoder parameters followed by decoder parameters.
  const ParamList& params() const { return params_; }
  const ParamList& decoder_params() const { return dec_params_; }

  // strd_rng seeds attention dropout; it is ignored when STRD is off.
  MaeResult forward(const Tensor& volume, const MaskPlan& mask, const Rng& strd_rng,
                    bool measure = false) const;

  Linear enc_proj, deep_proj, head;
  Tensor mask_token;  // [1, D]
  std::vector<SwmBlock> dec_blocks;
  LayerNorm dec_norm;

 private:
  std::unique_ptr<Encoder> encoder_;
  MaeConfig config_;
  std::size_t dec_dim_ = 0;
  ParamList dec_params_, params_;
};

struct PretrainConfig {
  EncoderConfig encoder;
  MaeConfig mae;
  AdamConfig adam{.lr = 1e-3};
  std::size_t epochs = 1;
  std::size_t max_steps = 0;  // 0 = no limit beyond epochs
  std::size_t batch_size = 1;
  std::uint64_t seed = 0;
  // Attach an observe-only attention hook when STRD is off, so drop and
  // attention-mass statistics are recorded for every run.
  bool record_attention = true;
};

struct PretrainRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double loss = 0.0;
  double drop_rate = 0.0;
  double mean_weight = 0.0;
  double omega_mass = 0.0;
};

using PretrainCallback = std::function<void(const PretrainRecord&)>;

// Mask and dropout streams are keyed by (seed, step, item).
std::uint64_t item_stream(std::uint64_t step, std::uint64_t item, std::uint64_t salt);

struct PretrainResult {
  std::unique_ptr<MaeModel> model;
  std::vector<PretrainRecord> curve;
};

PretrainResult pretrain(const PretrainConfig& config, const std::vector<Tensor>& volumes,
                        const PretrainCallback& on_step = {});

}  // namespace storm::inline STORM_PREC_NS
