#include <cstring>
#include <sstream>

#include "criteria.hpp"
#include "storm/io/preprocess.hpp"
#include "storm/io/synth.hpp"
#include "storm/model/checkpoint.hpp"
#include "storm/pretrain/mae.hpp"
#include "storm/prompt/prompt.hpp"

namespace acceptance::flt {

using namespace storm;

static_assert(!kDoublePrecision, "this unit runs the 32-bit training build");

namespace {

template <class... A>
std::string str(const A&... a) {
  std::ostringstream s;
  s.precision(4);
  (s << ... << a);
  return s.str();
}

Tensor synthetic(const SynthConfig& sc) {
  return volume_tensor(normalize_intensity(synth_fmri(sc).volume, NormalizeMode::kGlobalZscore).volume);
}

bool same_bits(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(Scalar)) == 0;
}

// Small model for the STRD-off comparison, where only the code path matters.
EncoderConfig small_encoder() {
  EncoderConfig c = variant_config("Base");
  c.variant = "small";
  c.embed_dim = 8;
  c.depths = {2, 1};
  c.window = {2, 2, 2, 2};
  c.head_dim = 4;
  c.seed = 2;
  return c;
}

}  // namespace

Outcome mae_training() {
  std::vector<Tensor> vols;
  for (std::uint64_t i = 0; i < 8; ++i) {
    SynthConfig sc;
    sc.seed = 100 + i;
    sc.dims = {32, 16, 16, 16};
    sc.noise_sd = 0.0;  // exactly low-rank
    vols.push_back(synthetic(sc));
  }
  PretrainConfig cfg;
  cfg.encoder = variant_config("Base");
  cfg.epochs = 1000;
  cfg.max_steps = 200;
  const auto res = pretrain(cfg, vols);
  double first = 0, last = 0;
  for (std::size_t i = 0; i < 10; ++i) {
    first += res.curve[i].loss / 10;
    last += res.curve[res.curve.size() - 10 + i].loss / 10;
  }
  const double reduction = 1.0 - last / first;

  // With STRD off, the observe-only hook must not change anything.
  std::vector<Tensor> small;
  for (std::uint64_t i = 0; i < 3; ++i) {
    SynthConfig sc;
    sc.seed = 7 + i;
    sc.dims = {4, 8, 8, 8};
    small.push_back(synthetic(sc));
  }
  PretrainConfig off;
  off.encoder = small_encoder();
  off.mae.strd = false;
  off.mae.decoder_dim = 8;
  off.epochs = 4;
  auto run = [&](bool record) {
    PretrainConfig c = off;
    c.record_attention = record;
    return pretrain(c, small);
  };
  const auto hooked = run(true), vanilla = run(false);
  bool equal = hooked.curve.size() == vanilla.curve.size();
  for (std::size_t i = 0; equal && i < hooked.curve.size(); ++i)
    equal = std::memcmp(&hooked.curve[i].loss, &vanilla.curve[i].loss, sizeof(double)) == 0;
  const auto& pa = hooked.model->params();
  const auto& pb = vanilla.model->params();
  for (std::size_t i = 0; equal && i < pa.size(); ++i) equal = same_bits(pa[i].tensor, pb[i].tensor);

  return {reduction >= 0.30 && equal,
          str("masked-patch loss ", first, " -> ", last, " (", reduction * 100, "% reduction over 200 steps); "
              "STRD-off vs vanilla ", equal ? "bitwise equal" : "DIFFERENT", " over ", hooked.curve.size(),
              " steps")};
}

Outcome prompt_tuning() {
  auto make = [](std::size_t i) {
    SynthConfig sc;
    sc.seed = 1000 + i;
    sc.dims = {8, 16, 16, 16};
    sc.noise_sd = 0.1;
    sc.map_seed = 77;
    const std::size_t label = i % 2;
    sc.amplitudes = {label ? 1.0 : -1.0};
    return Sample{synthetic(sc), label, {}};
  };
  std::vector<Sample> train, val;
  for (std::size_t i = 0; i < 40; ++i) train.push_back(make(i));
  for (std::size_t i = 40; i < 60; ++i) val.push_back(make(i));
  const Encoder backbone(variant_config("Base"));
  const auto before = params_hash(backbone.params());
  TuneConfig cfg;  // k = 8, linear head, 300 steps
  cfg.batch_size = 1;
  const TuneResult res = finetune(backbone, train, cfg);
  const auto after = params_hash(backbone.params());
  const auto out = predict(backbone, res.state, val);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < val.size(); ++i) correct += (out[i][1] > out[i][0]) == (val[i].label == 1);
  const double acc = static_cast<double>(correct) / static_cast<double>(val.size());
  const bool frozen = before == after && res.backbone_hash_after == before;
  return {frozen && res.curve.size() == 300 && res.trainable_fraction <= 0.03 && acc >= 0.9,
          str("backbone hash ", frozen ? "unchanged" : "CHANGED", " after ", res.curve.size(),
              " steps; trainable ", res.trainable, "/", res.total, " = ", res.trainable_fraction * 100,
              "%; validation accuracy ", acc * 100, "%")};
}

}  // namespace acceptance::flt
