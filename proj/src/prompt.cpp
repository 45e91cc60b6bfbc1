#include "storm/prompt/prompt.hpp"

#include <cmath>

#include "storm/core/log.hpp"
#include "storm/model/checkpoint.hpp"

namespace storm::inline STORM_PREC_NS {

const char* head_kind_name(HeadKind kind) {
  switch (kind) {
    case HeadKind::kClassification: return "classification";
    case HeadKind::kRegression: return "regression";
    case HeadKind::kEmbedding: return "embedding";
  }
  return "unknown";
}

HeadKind parse_head_kind(const std::string& name) {
  if (name == "classification") return HeadKind::kClassification;
  if (name == "regression") return HeadKind::kRegression;
  if (name == "embedding") return HeadKind::kEmbedding;
  fail(ErrorKind::kConfig, "unknown head kind '", name,
       "' (expected classification, regression or embedding)");
}

TaskHead::TaskHead(std::size_t in_dim, const HeadSpec& s, Rng& rng) : spec(s) {
  STORM_CHECK(spec.out_dim >= 1, ErrorKind::kConfig, "head output dim must be >= 1");
  STORM_CHECK(spec.kind != HeadKind::kClassification || spec.out_dim >= 2, ErrorKind::kConfig,
              "classification head needs >= 2 classes, got ", spec.out_dim);
  if (spec.hidden) {
    hidden = Linear(in_dim, spec.hidden, true, rng);
    out = Linear(spec.hidden, spec.out_dim, true, rng);
  } else {
    out = Linear(in_dim, spec.out_dim, true, rng);
  }
}

Tensor TaskHead::operator()(const Tensor& features) const {
  return spec.hidden ? out(ops::gelu(hidden(features))) : out(features);
}

void TaskHead::collect(const std::string& prefix, ParamList& params) const {
  if (spec.hidden) hidden.collect(prefix + ".hidden", params);
  out.collect(prefix + ".out", params);
}

ParamList PromptState::params() const {
  ParamList p;
  if (k() > 0) {
    p.push_back({"prompt.tokens", prompts.tokens});
    for (std::size_t s = 0; s < prompts.merge_proj.size(); ++s)
      prompts.merge_proj[s].collect("prompt.merge." + std::to_string(s), p);
  }
  head.collect("head", p);
  return p;
}

PromptState make_prompt_state(const Encoder& backbone, std::size_t k, const HeadSpec& head,
                              std::uint64_t seed) {
  const EncoderConfig& c = backbone.config();
  Rng rng = Rng(seed).split(0x545054);
  PromptState st;
  if (k > 0) {
    std::vector<Scalar> p(k * c.embed_dim);
    for (auto& v : p) v = static_cast<Scalar>(rng.uniform(-0.02, 0.02));
    st.prompts.tokens = Tensor({k, c.embed_dim}, std::move(p), true);
    for (std::size_t s = 0; s + 1 < c.n_stages(); ++s)
      st.prompts.merge_proj.emplace_back(c.stage_dim(s), c.stage_dim(s + 1), true, rng);
  }
  st.head = TaskHead(c.out_dim(), head, rng);
  st.backbone_hash = params_hash(backbone.params());
  return st;
}

EncoderOutput prompted_forward(const Encoder& backbone, const PromptState& state,
                               const Tensor& volume) {
  ForwardOptions opt;
  if (state.k() > 0) opt.prompts = &state.prompts;
  return backbone.forward(volume, opt);
}

Tensor task_output(const Encoder& backbone, const PromptState& state, const Tensor& volume) {
  return state.head(prompted_forward(backbone, state, volume).features);
}

Tensor task_loss(HeadKind kind, const Tensor& output, const Sample& sample) {
  const std::size_t d = output.dim(1);
  switch (kind) {
    case HeadKind::kClassification: {
      STORM_CHECK(sample.label < d, ErrorKind::kData, "label ", sample.label, " outside ", d,
                  " classes");
      std::vector<Scalar> onehot(d, Scalar{0});
      onehot[sample.label] = Scalar{-1};
      return ops::sum_all(ops::mul(ops::log_softmax_rows(output), Tensor({1, d}, std::move(onehot))));
    }
    case HeadKind::kRegression: {
      STORM_CHECK(sample.target.size() == d, ErrorKind::kData, "regression target has ",
                  sample.target.size(), " values, head has ", d);
      const Tensor t({1, d}, std::vector<Scalar>(sample.target.begin(), sample.target.end()));
      const Tensor diff = ops::sub(output, t);
      return ops::mean_all(ops::mul(diff, diff));
    }
    case HeadKind::kEmbedding: {
      STORM_CHECK(sample.target.size() == d, ErrorKind::kData, "embedding target has ",
                  sample.target.size(), " values, head has ", d);
      double norm = 0;
      for (double v : sample.target) norm += v * v;
      STORM_CHECK(norm > 0.0, ErrorKind::kData, "embedding target has zero norm");
      std::vector<Scalar> t(d);
      for (std::size_t j = 0; j < d; ++j)
        t[j] = static_cast<Scalar>(sample.target[j] / std::sqrt(norm));
      const Tensor cos = ops::sum_all(ops::mul(ops::normalize_rows(output), Tensor({1, d}, std::move(t))));
      return ops::sub(Tensor::scalar(Scalar{1}), cos);
    }
  }
  fail(ErrorKind::kInternal, "unhandled head kind");
}

namespace {

TuneResult run_tuning(const Encoder& backbone, const std::vector<Sample>& train,
                      const TuneConfig& cfg, const TuneCallback& on_step, bool full) {
  STORM_CHECK(!train.empty(), ErrorKind::kConfig, "fine-tuning needs at least one sample");
  STORM_CHECK(cfg.batch_size >= 1, ErrorKind::kConfig, "batch_size must be >= 1");
  TuneResult res;
  res.state = make_prompt_state(backbone, cfg.k, cfg.head, cfg.seed);
  const ParamList tuned = res.state.params();
  ParamList trainable = tuned;
  if (full) trainable.insert(trainable.begin(), backbone.params().begin(), backbone.params().end());

  res.trainable = param_count(trainable);
  res.total = backbone.param_count() + param_count(tuned);
  res.trainable_fraction = static_cast<double>(res.trainable) / static_cast<double>(res.total);
  if (!full && res.trainable_fraction > cfg.max_trainable_fraction)
    log(LogLevel::kWarn, "trainable fraction ", res.trainable_fraction, " exceeds ",
        cfg.max_trainable_fraction, " (", res.trainable, " of ", res.total, " parameters)");
  res.backbone_hash_before = res.state.backbone_hash;

  set_requires_grad(backbone.params(), full);
  set_requires_grad(tuned, true);
  Adam adam(cfg.adam);
  const Rng root(cfg.seed);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    Rng pick = root.split(mix64(step) ^ 0x5354);
    TuneRecord rec{step + 1, 0.0};
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      const Sample& s = train[pick.below(train.size())];
      Rng view_rng = pick.split(b);
      const Tensor vol = cfg.view ? cfg.view(s, view_rng) : s.volume;
      Tape tape;
      Tensor loss;
      {
        TapeScope scope(tape);
        loss = ops::scale(task_loss(cfg.head.kind, task_output(backbone, res.state, vol), s),
                          Scalar(1) / static_cast<Scalar>(cfg.batch_size));
      }
      const double value = static_cast<double>(loss.item());
      STORM_CHECK(std::isfinite(value), ErrorKind::kTraining, "non-finite loss at step ", step + 1);
      rec.loss += value;
      tape.backward(loss);
    }
    adam.step(trainable);
    res.curve.push_back(rec);
    if (on_step) on_step(rec);
  }
  set_requires_grad(backbone.params(), false);
  set_requires_grad(tuned, false);
  res.backbone_hash_after = params_hash(backbone.params());
  if (full) res.state.backbone_hash = res.backbone_hash_after;
  return res;
}

}  // namespace

TuneResult finetune(const Encoder& backbone, const std::vector<Sample>& train,
                    const TuneConfig& config, const TuneCallback& on_step) {
  TuneResult r = run_tuning(backbone, train, config, on_step, false);
  STORM_CHECK(r.backbone_hash_after == r.backbone_hash_before, ErrorKind::kInternal,
              "frozen backbone changed during prompt tuning");
  return r;
}

TuneResult full_finetune(Encoder& backbone, const std::vector<Sample>& train,
                         const TuneConfig& config, const TuneCallback& on_step) {
  return run_tuning(backbone, train, config, on_step, true);
}

std::vector<std::vector<double>> predict(const Encoder& backbone, const PromptState& state,
                                         const std::vector<Sample>& samples) {
  NoGradScope ng;
  std::vector<std::vector<double>> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    const Tensor y = task_output(backbone, state, s.volume);
    out.emplace_back(y.data().begin(), y.data().end());
  }
  return out;
}

void save_prompt_state(const std::filesystem::path& path, const PromptState& state,
                       const Encoder& backbone, const nlohmann::json& extra) {
  nlohmann::json m = extra;
  m["kind"] = "prompt_state";
  m["backbone_hash"] = hex64(params_hash(backbone.params()));
  m["backbone_variant"] = backbone.config().variant;
  m["k"] = state.k();
  m["head"] = {{"kind", head_kind_name(state.head.spec.kind)},
               {"out_dim", state.head.spec.out_dim},
               {"hidden", state.head.spec.hidden}};
  save_checkpoint(path, m, state.params());
}

PromptState load_prompt_state(const std::filesystem::path& path, const Encoder& backbone) {
  const Checkpoint ckpt = read_checkpoint(path);
  const auto& m = ckpt.manifest;
  STORM_CHECK(m.value("kind", "") == "prompt_state", ErrorKind::kFormat, path.string(),
              " is not a prompt checkpoint");
  const std::string want = m.value("backbone_hash", "");
  const std::string have = hex64(params_hash(backbone.params()));
  STORM_CHECK(want == have, ErrorKind::kConfig, path.string(), " was tuned against backbone ",
              want, ", loaded backbone is ", have);
  HeadSpec spec;
  const auto& h = m.at("head");
  spec.kind = parse_head_kind(h.at("kind").get<std::string>());
  spec.out_dim = h.at("out_dim").get<std::size_t>();
  spec.hidden = h.at("hidden").get<std::size_t>();
  PromptState st = make_prompt_state(backbone, m.at("k").get<std::size_t>(), spec, 0);
  load_params(ckpt, st.params());
  return st;
}

}  // namespace storm::inline STORM_PREC_NS
