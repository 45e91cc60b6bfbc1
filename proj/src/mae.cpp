#include "storm/pretrain/mae.hpp"

#include <cmath>

namespace storm::inline STORM_PREC_NS {

Tensor normalize_patches(const Tensor& patches) {
  const std::size_t n = patches.dim(0), p = patches.dim(1);
  const auto src = patches.data();
  std::vector<Scalar> out(src.size());
  for (std::size_t i = 0; i < n; ++i) {
    double m = 0, v = 0;
    for (std::size_t j = 0; j < p; ++j) m += src[i * p + j];
    m /= static_cast<double>(p);
    for (std::size_t j = 0; j < p; ++j) v += (src[i * p + j] - m) * (src[i * p + j] - m);
    v /= static_cast<double>(p);
    const double inv = 1.0 / std::sqrt(v + kPatchNormEps);
    for (std::size_t j = 0; j < p; ++j)
      out[i * p + j] = static_cast<Scalar>((src[i * p + j] - m) * inv);
  }
  return Tensor({n, p}, std::move(out));
}

Tensor masked_patch_loss(const Tensor& prediction, const Tensor& target,
                         const std::vector<std::size_t>& rows) {
  STORM_CHECK(prediction.shape() == target.shape(), ErrorKind::kDimension, "prediction ",
              shape_str(prediction.shape()), " vs target ", shape_str(target.shape()));
  STORM_CHECK(!rows.empty(), ErrorKind::kContract, "masked patch loss over zero rows");
  const ops::IndexList idx(rows.begin(), rows.end());
  const Tensor diff = ops::sub(ops::index_rows(prediction, idx), ops::index_rows(target, idx));
  return ops::mean_all(ops::mul(diff, diff));
}

MaeModel::MaeModel(EncoderConfig ec, MaeConfig mc)
    : encoder_(std::make_unique<Encoder>(std::move(ec))), config_(mc) {
  const EncoderConfig& e = encoder_->config();
  STORM_CHECK(config_.decoder_depth >= 1, ErrorKind::kConfig, "decoder depth must be >= 1");
  STORM_CHECK(config_.decoder_mlp_ratio >= 1, ErrorKind::kConfig, "decoder mlp ratio must be >= 1");
  dec_dim_ = config_.decoder_dim ? config_.decoder_dim : e.stage_dim(std::min<std::size_t>(1, e.n_stages() - 1));
  Rng rng = Rng(e.seed).split(0x444543);
  enc_proj = Linear(e.embed_dim, dec_dim_, true, rng);
  deep_proj = Linear(e.out_dim(), dec_dim_, false, rng);
  // Starts closed: the per-frame summary it carries otherwise dominates early
  // training and the decoder settles on predicting frame means.
  deep_proj.zero_();
  std::vector<Scalar> mt(dec_dim_);
  for (auto& v : mt) v = static_cast<Scalar>(0.02 * rng.normal());
  mask_token = Tensor({1, dec_dim_}, std::move(mt), true);
  EncoderConfig dc = e;
  dc.mlp_ratio = config_.decoder_mlp_ratio;
  dc.window = config_.decoder_window;
  for (std::size_t b = 0; b < config_.decoder_depth; ++b)
    dec_blocks.emplace_back(config_.decoder_mixer, dec_dim_, dc, b % 2 == 1, rng);
  dec_norm = LayerNorm(dec_dim_);
  // Small head: untrained predictions sit near zero.
  head = Linear(dec_dim_, e.patch.total(), true, rng, 0.02);

  enc_proj.collect("decoder.enc_proj", dec_params_);
  deep_proj.collect("decoder.deep_proj", dec_params_);
  dec_params_.push_back({"decoder.mask_token", mask_token});
  for (std::size_t b = 0; b < dec_blocks.size(); ++b)
    dec_blocks[b].collect("decoder.blocks." + std::to_string(b), dec_params_);
  dec_norm.collect("decoder.norm", dec_params_);
  head.collect("decoder.head", dec_params_);

  STORM_CHECK(param_count(dec_params_) < encoder_->param_count(), ErrorKind::kConfig,
              "decoder (", param_count(dec_params_), " parameters) must be smaller than the encoder (",
              encoder_->param_count(), ")");
  params_ = encoder_->params();
  params_.insert(params_.end(), dec_params_.begin(), dec_params_.end());
}

MaeResult MaeModel::forward(const Tensor& volume, const MaskPlan& mask, const Rng& strd_rng,
                            bool measure) const {
  const Encoder& enc = *encoder_;
  const Grid4 vdims{volume.dim(0), volume.dim(3), volume.dim(2), volume.dim(1)};
  const PatchGrid pg = make_patch_grid(vdims, enc.config().patch);
  const std::size_t N = pg.n_tokens();
  STORM_CHECK(mask.visible.size() == N, ErrorKind::kDimension, "mask plan covers ",
              mask.visible.size(), " tokens, volume has ", N);

  std::unique_ptr<StrdHook> hook;
  if (config_.strd || measure) hook = std::make_unique<StrdHook>(config_.strd, strd_rng);
  ForwardOptions opt;
  opt.visible = &mask.visible;
  opt.hook = hook.get();
  const EncoderOutput eo = enc.forward(volume, opt);

  const TokenState& s1 = eo.stages.front();
  const TokenState& sl = eo.stages.back();
  const std::size_t levels = eo.stages.size() - 1;
  ops::IndexList up(N), vis(N), hid(N);
  for (std::size_t id = 0; id < N; ++id) {
    const Coord4 c = token_coord(pg.grid, id);
    up[id] = static_cast<ops::Index>(token_id(sl.grid, c.t, c.x >> levels, c.y >> levels, c.z >> levels));
    const bool seen = s1.active[id] != 0;
    vis[id] = seen ? static_cast<ops::Index>(id) : -1;
    hid[id] = seen ? -1 : 0;
  }
  Tensor x = ops::add(ops::index_rows(enc_proj(s1.x), vis), ops::index_rows(mask_token, hid));
  x = ops::add(x, deep_proj(ops::index_rows(sl.x, up)));
  x = ops::add(x, positional_encoding(pg.grid, dec_dim_));

  TokenState ds{x, pg.grid, pg.valid, 0};
  for (const auto& b : dec_blocks) b.forward(ds, nullptr);

  MaeResult r;
  r.prediction = head(dec_norm(ds.x));
  {
    NoGradScope ng;
    const Tensor raw = patchify(volume.detach(), pg);
    r.target = config_.loss_norm == LossNorm::kPerPatch ? normalize_patches(raw) : raw;
  }
  r.loss = masked_patch_loss(r.prediction, r.target, mask.masked);
  if (hook) r.strd = hook->stats();
  return r;
}

std::uint64_t item_stream(std::uint64_t step, std::uint64_t item, std::uint64_t salt) {
  return mix64(mix64(step * 0x9e3779b97f4a7c15ull + salt) ^ item);
}

PretrainResult pretrain(const PretrainConfig& cfg, const std::vector<Tensor>& volumes,
                        const PretrainCallback& on_step) {
  STORM_CHECK(!volumes.empty(), ErrorKind::kConfig, "pretraining needs at least one volume");
  STORM_CHECK(cfg.batch_size >= 1 && cfg.epochs >= 1, ErrorKind::kConfig,
              "batch_size and epochs must be >= 1");
  EncoderConfig ec = cfg.encoder;
  ec.seed = cfg.seed;
  PretrainResult res;
  res.model = std::make_unique<MaeModel>(ec, cfg.mae);
  MaeModel& model = *res.model;
  const ParamList& params = model.params();
  set_requires_grad(params, true);
  Adam adam(cfg.adam);
  const Rng root(cfg.seed);

  std::size_t step = 0;
  const std::size_t n = volumes.size();
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng shuffle = root.split(item_stream(epoch, 0, 0x5348));
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);

    for (std::size_t b0 = 0; b0 < n; b0 += cfg.batch_size) {
      if (cfg.max_steps && step >= cfg.max_steps) return res;
      const std::size_t b1 = std::min(n, b0 + cfg.batch_size);
      PretrainRecord rec;
      rec.step = step + 1;
      rec.epoch = epoch + 1;
      StrdStats agg;
      for (std::size_t b = b0; b < b1; ++b) {
        const Tensor& vol = volumes[order[b]];
        const std::size_t n_tok =
            make_patch_grid({vol.dim(0), vol.dim(3), vol.dim(2), vol.dim(1)}, ec.patch).n_tokens();
        const MaskPlan mask = make_mask(n_tok, cfg.mae.mask_ratio,
                                        root.split(item_stream(step, b - b0, 0x4d)).next_u64());
        const Rng strd_rng = root.split(item_stream(step, b - b0, 0x53));
        Tape tape;
        Tensor loss;
        {
          TapeScope scope(tape);
          const MaeResult r = model.forward(vol, mask, strd_rng, cfg.record_attention);
          loss = ops::scale(r.loss, Scalar(1) / static_cast<Scalar>(b1 - b0));
          agg.weight_sum += r.strd.weight_sum;
          agg.eligible += r.strd.eligible;
          agg.dropped += r.strd.dropped;
          agg.omega_mass_sum += r.strd.omega_mass_sum;
          agg.queries += r.strd.queries;
        }
        const double value = static_cast<double>(loss.item());
        STORM_CHECK(std::isfinite(value), ErrorKind::kTraining, "non-finite loss at step ",
                    step + 1, " (epoch ", epoch + 1, ", batch item ", b - b0, ")");
        rec.loss += value;
        tape.backward(loss);
      }
      adam.step(params);
      rec.drop_rate = agg.drop_rate();
      rec.mean_weight = agg.mean_weight();
      rec.omega_mass = agg.omega_mass();
      res.curve.push_back(rec);
      if (on_step) on_step(rec);
      ++step;
    }
  }
  return res;
}

}  // namespace storm::inline STORM_PREC_NS
