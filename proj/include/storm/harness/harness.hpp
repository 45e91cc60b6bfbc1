#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "storm/core/rng.hpp"
#include "storm/prompt/prompt.hpp"

namespace storm::inline STORM_PREC_NS {

// ---- tasks -------------------------------------------------------------

enum class TaskKind {
  kGenderClassification,
  kAgeRegression,
  kPhenotypeRegression,
  kDiseaseClassification,
  kRetrieval,
  kStateClassification,
};

const char* task_kind_name(TaskKind kind);
TaskKind parse_task_kind(const std::string& name);

enum class TaskFamily { kClassification, kRegression, kRetrieval };
TaskFamily task_family(TaskKind kind);

// Metric names reported for a task kind.
std::vector<std::string> task_metrics(TaskKind kind);

// ---- splits ------------------------------------------------------------

inline constexpr double kScarcityLevels[] = {0.1, 0.3, 0.5, 1.0};

struct SplitPlan {
  std::vector<std::size_t> train, val, test;
  double scarcity = 1.0;
  std::uint64_t seed = 0;
};

// Shuffled 8:1:1 split (val and test get floor(n/10), train the rest).
// Scarcity keeps round(scarcity * |train|) training items, at least one;
// val and test do not depend on it.
SplitPlan make_split(std::size_t n, std::uint64_t seed, double scarcity = 1.0);

// ---- labels ------------------------------------------------------------

class LabelCodec {
 public:
  static LabelCodec fit_classes(const std::vector<std::string>& labels);
  static LabelCodec fit_targets(const std::vector<std::vector<double>>& targets);

  bool is_classification() const { return !classes_.empty(); }
  const std::vector<std::string>& classes() const { return classes_; }
  std::size_t n_outputs() const;

  std::size_t class_index(const std::string& label) const;
  std::vector<double> one_hot(const std::string& label) const;
  const std::string& decode_class(std::size_t index) const;

  std::vector<double> encode_target(const std::vector<double>& y) const;
  std::vector<double> decode_target(const std::vector<double>& z) const;

  nlohmann::json to_json() const;
  static LabelCodec from_json(const nlohmann::json& j);

  const std::vector<double>& mean() const { return mean_; }
  const std::vector<double>& sd() const { return sd_; }

 private:
  std::vector<std::string> classes_;
  std::vector<double> mean_, sd_;
};

// ---- metrics -----------------------------------------------------------

struct MetricRecord {
  std::map<std::string, double> values;
  std::vector<std::string> flags;  // e.g. "pcc_degenerate"
};

// Rank-based binary AUC with mid-ranks for ties. Data error when only one
// class is present.
double binary_auc(const std::vector<double>& scores, const std::vector<std::uint8_t>& positive);

// scores[i] holds one value per class. Accuracy by argmax; AUC binary for
// two classes, macro one-vs-rest otherwise.
MetricRecord classification_metrics(const std::vector<std::vector<double>>& scores,
                                    const std::vector<std::size_t>& labels);

struct PearsonResult {
  double r = 0.0;
  bool degenerate = false;
};
// Zero variance on either side gives r = 0 with the degenerate flag.
PearsonResult pearson(const std::vector<double>& a, const std::vector<double>& b);

// Predictions and targets on the original scale. MSE and MAE over every
// value; PCC averaged over targets.
MetricRecord regression_metrics(const std::vector<std::vector<double>>& predictions,
                                const std::vector<std::vector<double>>& targets);

// ---- retrieval ---------------------------------------------------------

enum class RetrievalDirection { kBrainToImage, kImageToBrain };
const char* retrieval_direction_name(RetrievalDirection d);

// Row-major embedding matrix.
struct Embeddings {
  std::size_t n = 0, dim = 0;
  std::vector<double> values;

  std::span<const double> row(std::size_t i) const { return {values.data() + i * dim, dim}; }
};

struct RetrievalPool {
  Embeddings queries, candidates;
  std::vector<std::size_t> truth;  // candidate index per query
};

// Candidate indices ordered by descending cosine similarity (ties by index).
std::vector<std::size_t> rank_candidates(std::span<const double> query, const Embeddings& candidates,
                                         std::size_t top);

struct RetrievalConfig {
  std::size_t n_queries = 300;
  std::size_t repeats = 30;
  std::uint64_t seed = 0;
  RetrievalDirection direction = RetrievalDirection::kBrainToImage;
};

struct RetrievalReport {
  RetrievalDirection direction = RetrievalDirection::kBrainToImage;
  std::size_t n_queries = 0, repeats = 0;
  double top1 = 0, top3 = 0, top5 = 0;            // mean success rates
  double top1_sd = 0, top3_sd = 0, top5_sd = 0;  // sd over repeats
};

// Success rates of one pool.
std::array<double, 3> evaluate_pool(const RetrievalPool& pool);

// brain[i] and image[i] are a matched pair. Every repeat samples n_queries
// pairs; queries come from one side and candidates are the matched items of
// the other side, so each query has exactly one ground truth.
RetrievalReport retrieval_eval(const Embeddings& brain, const Embeddings& image,
                               const RetrievalConfig& config);

// ---- tfMRI clips -------------------------------------------------------

enum class ClipMode { kRandomTrain, kFirstEval };

// k frame indices: contiguous from a start frame, wrapping around when the
// sequence is shorter than k. Eval starts at 0; train draws the start
// uniformly from {0..T-k} (or {0..T-1} when T < k).
std::vector<std::size_t> frame_window(std::size_t n_frames, std::size_t k, ClipMode mode, Rng* rng);

// [T, Z, Y, X] -> [k, Z, Y, X].
Tensor frame_window_extract(const Tensor& volume, std::size_t k, ClipMode mode, Rng* rng);

// ---- benchmark ---------------------------------------------------------

struct BenchmarkRecord {
  std::string task, dataset;
  double scarcity = 1.0;
  std::uint64_t seed = 0;
  std::string metric;
  double value = 0.0;
};

struct BenchmarkConfig {
  std::string task_name;
  std::string dataset = "synthetic";
  std::vector<double> scarcities{0.1, 0.3, 0.5, 1.0};
  std::vector<std::uint64_t> seeds{0, 1, 2};
};

// Trains on split.train and returns test metrics.
using BenchmarkRunner = std::function<MetricRecord(const SplitPlan& split, std::uint64_t seed)>;

std::vector<BenchmarkRecord> run_benchmark(std::size_t n_samples, const BenchmarkConfig& config,
                                           const BenchmarkRunner& runner);

// A labelled dataset for prompt-tuning benchmarks.
struct TaskData {
  TaskKind kind = TaskKind::kGenderClassification;
  std::vector<Tensor> volumes;
  std::vector<std::string> labels;               // classification
  std::vector<std::vector<double>> targets;      // regression, original scale
};

// Fits the codec on the training split, tunes prompts plus head, and scores
// the test split. State classification trains on random clips of
// `clip_frames` and evaluates on the first clip_frames frames.
struct PromptRunnerConfig {
  TuneConfig tune;
  std::size_t clip_frames = 40;
};

BenchmarkRunner prompt_tuning_runner(const Encoder& backbone, const TaskData& data,
                                     const PromptRunnerConfig& config);

// Report files: one JSON object per line, and a mean/sd summary table.
void write_jsonl(const std::filesystem::path& path, const std::vector<BenchmarkRecord>& records);
std::vector<BenchmarkRecord> read_jsonl(const std::filesystem::path& path);
void write_summary_csv(const std::filesystem::path& path, const std::vector<BenchmarkRecord>& records);
nlohmann::json to_json(const BenchmarkRecord& r);

// Content hash over records, independent of file formatting.
std::uint64_t records_hash(const std::vector<BenchmarkRecord>& records);

// ---- paired retrieval embeddings ---------------------------------------

// Tunes an embedding head so that backbone features align (cosine) with a
// target embedding per volume; returns the brain-side embeddings of `eval`.
struct PairedEncoderResult {
  TuneResult tuned;
  Embeddings brain, image;
};

PairedEncoderResult train_paired_encoder(const Encoder& backbone, const std::vector<Sample>& train,
                                         const std::vector<Sample>& eval, const TuneConfig& config);

}  // namespace storm::inline STORM_PREC_NS
