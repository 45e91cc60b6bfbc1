#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "storm/model/encoder.hpp"
#include "storm/tensor/optim.hpp"

namespace storm::inline STORM_PREC_NS {

enum class HeadKind { kClassification, kRegression, kEmbedding };

const char* head_kind_name(HeadKind kind);
HeadKind parse_head_kind(const std::string& name);

struct HeadSpec {
  HeadKind kind = HeadKind::kClassification;
  std::size_t out_dim = 2;  // classes, regression targets or embedding width
  std::size_t hidden = 0;   // 0 = linear head
};

// Pooled features [B, in] -> [B, out_dim]; optional GELU hidden layer.
struct TaskHead {
  HeadSpec spec;
  Linear hidden, out;

  TaskHead() = default;
  TaskHead(std::size_t in_dim, const HeadSpec& spec, Rng& rng);
  Tensor operator()(const Tensor& features) const;
  void collect(const std::string& prefix, ParamList& params) const;
};

// Task-specific tuning state against a frozen backbone: prompt tokens, their
// per-merge width projections and the head.
struct PromptState {
  PromptSet prompts;
  TaskHead head;
  std::uint64_t backbone_hash = 0;

  std::size_t k() const { return prompts.k(); }
  ParamList params() const;
};

// P ~ U(-0.02, 0.02). k = 0 gives no prompt tokens and no projections.
PromptState make_prompt_state(const Encoder& backbone, std::size_t k, const HeadSpec& head,
                              std::uint64_t seed);

// Encoder forward with the prompts injected; k = 0 runs the plain encoder.
EncoderOutput prompted_forward(const Encoder& backbone, const PromptState& state,
                               const Tensor& volume);
Tensor task_output(const Encoder& backbone, const PromptState& state, const Tensor& volume);

// One labelled example. Classification uses `label`; regression and
// embedding tasks use `target` (already encoded).
struct Sample {
  Tensor volume;  // [T, Z, Y, X]
  std::size_t label = 0;
  std::vector<double> target;
};

// Cross-entropy, mean squared error or 1 - cosine, depending on the head.
Tensor task_loss(HeadKind kind, const Tensor& output, const Sample& sample);

// Maps a training sample to the volume seen at one step (for example a
// random clip). Identity when empty.
using TrainView = std::function<Tensor(const Sample&, Rng&)>;

struct TuneConfig {
  std::size_t k = 8;
  HeadSpec head;
  AdamConfig adam{.lr = 3e-3};
  std::size_t steps = 300;
  std::size_t batch_size = 4;
  std::uint64_t seed = 0;
  double max_trainable_fraction = 0.03;
  TrainView view;
};

struct TuneRecord {
  std::size_t step = 0;
  double loss = 0.0;
};

struct TuneResult {
  PromptState state;
  std::vector<TuneRecord> curve;
  std::size_t trainable = 0;
  std::size_t total = 0;
  double trainable_fraction = 0.0;
  std::uint64_t backbone_hash_before = 0;
  std::uint64_t backbone_hash_after = 0;
};

using TuneCallback = std::function<void(const TuneRecord&)>;

// Trains the prompts and head only; the backbone is never written. A
// trainable fraction above the limit is logged as a warning.
TuneResult finetune(const Encoder& backbone, const std::vector<Sample>& train,
                    const TuneConfig& config, const TuneCallback& on_step = {});

// Trains every backbone parameter together with the prompt state.
TuneResult full_finetune(Encoder& backbone, const std::vector<Sample>& train,
                         const TuneConfig& config, const TuneCallback& on_step = {});

// Head outputs per sample, one row each.
std::vector<std::vector<double>> predict(const Encoder& backbone, const PromptState& state,
                                         const std::vector<Sample>& samples);

// Prompt checkpoints use the backbone container format and record the
// backbone's parameter hash; loading against a different backbone fails.
void save_prompt_state(const std::filesystem::path& path, const PromptState& state,
                       const Encoder& backbone, const nlohmann::json& extra = {});
PromptState load_prompt_state(const std::filesystem::path& path, const Encoder& backbone);

}  // namespace storm::inline STORM_PREC_NS
