#include "storm/harness/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>

#include "storm/model/checkpoint.hpp"

namespace storm::inline STORM_PREC_NS {

// ---- tasks -------------------------------------------------------------

namespace {
constexpr std::pair<TaskKind, const char*> kTaskNames[] = {
    {TaskKind::kGenderClassification, "gender-classification"},
    {TaskKind::kAgeRegression, "age-regression"},
    {TaskKind::kPhenotypeRegression, "phenotype-regression"},
    {TaskKind::kDiseaseClassification, "disease-classification"},
    {TaskKind::kRetrieval, "retrieval"},
    {TaskKind::kStateClassification, "state-classification"},
};
}  // namespace

const char* task_kind_name(TaskKind kind) {
  for (const auto& [k, name] : kTaskNames)
    if (k == kind) return name;
  return "unknown";
}

TaskKind parse_task_kind(const std::string& name) {
  for (const auto& [k, n] : kTaskNames)
    if (name == n) return k;
  std::string known;
  for (const auto& [k, n] : kTaskNames) known += std::string(known.empty() ? "" : ", ") + n;
  fail(ErrorKind::kConfig, "unknown task '", name, "' (expected one of ", known, ")");
}

TaskFamily task_family(TaskKind kind) {
  switch (kind) {
    case TaskKind::kAgeRegression:
    case TaskKind::kPhenotypeRegression: return TaskFamily::kRegression;
    case TaskKind::kRetrieval: return TaskFamily::kRetrieval;
    default: return TaskFamily::kClassification;
  }
}

std::vector<std::string> task_metrics(TaskKind kind) {
  switch (task_family(kind)) {
    case TaskFamily::kClassification: return {"accuracy", "auc"};
    case TaskFamily::kRegression: return {"mse", "mae", "pcc"};
    case TaskFamily::kRetrieval: return {"top1", "top3", "top5"};
  }
  return {};
}

// ---- splits ------------------------------------------------------------

SplitPlan make_split(std::size_t n, std::uint64_t seed, double scarcity) {
  STORM_CHECK(n >= 10, ErrorKind::kConfig, "an 8:1:1 split needs at least 10 samples, got ", n);
  STORM_CHECK(scarcity > 0.0 && scarcity <= 1.0, ErrorKind::kConfig, "scarcity ", scarcity,
              " must lie in (0, 1]");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed, 0x53504c54);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  const std::size_t n_hold = n / 10;
  SplitPlan p;
  p.seed = seed;
  p.scarcity = scarcity;
  p.val.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_hold));
  p.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_hold),
                order.begin() + static_cast<std::ptrdiff_t>(2 * n_hold));
  std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(2 * n_hold), order.end());
  // Scarcity subsamples with its own stream so the full shuffle is shared.
  Rng sub(seed, 0x53434152);
  for (std::size_t i = train.size(); i > 1; --i) std::swap(train[i - 1], train[sub.below(i)]);
  const auto keep = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(scarcity * static_cast<double>(train.size()))));
  train.resize(std::min(keep, train.size()));
  std::sort(train.begin(), train.end());
  std::sort(p.val.begin(), p.val.end());
  std::sort(p.test.begin(), p.test.end());
  p.train = std::move(train);
  return p;
}

// ---- labels ------------------------------------------------------------

LabelCodec LabelCodec::fit_classes(const std::vector<std::string>& labels) {
  STORM_CHECK(!labels.empty(), ErrorKind::kData, "cannot fit a label codec on zero labels");
  std::set<std::string> uniq(labels.begin(), labels.end());
  LabelCodec c;
  c.classes_.assign(uniq.begin(), uniq.end());
  STORM_CHECK(c.classes_.size() >= 2, ErrorKind::kData, "classification needs >= 2 classes, got '",
              c.classes_.front(), "' only");
  return c;
}

LabelCodec LabelCodec::fit_targets(const std::vector<std::vector<double>>& targets) {
  STORM_CHECK(!targets.empty(), ErrorKind::kData, "cannot fit a label codec on zero targets");
  const std::size_t d = targets.front().size();
  STORM_CHECK(d >= 1, ErrorKind::kData, "regression targets are empty");
  LabelCodec c;
  c.mean_.assign(d, 0.0);
  c.sd_.assign(d, 0.0);
  for (const auto& t : targets) {
    STORM_CHECK(t.size() == d, ErrorKind::kData, "target has ", t.size(), " values, expected ", d);
    for (std::size_t j = 0; j < d; ++j) c.mean_[j] += t[j];
  }
  for (auto& m : c.mean_) m /= static_cast<double>(targets.size());
  for (const auto& t : targets)
    for (std::size_t j = 0; j < d; ++j) c.sd_[j] += (t[j] - c.mean_[j]) * (t[j] - c.mean_[j]);
  for (std::size_t j = 0; j < d; ++j) {
    c.sd_[j] = std::sqrt(c.sd_[j] / static_cast<double>(targets.size()));
    STORM_CHECK(c.sd_[j] > 0.0, ErrorKind::kData, "regression target ", j,
                " is constant on the training split");
  }
  return c;
}

std::size_t LabelCodec::n_outputs() const { return is_classification() ? classes_.size() : mean_.size(); }

std::size_t LabelCodec::class_index(const std::string& label) const {
  const auto it = std::lower_bound(classes_.begin(), classes_.end(), label);
  STORM_CHECK(it != classes_.end() && *it == label, ErrorKind::kData, "unseen class '", label,
              "' at encode");
  return static_cast<std::size_t>(it - classes_.begin());
}

std::vector<double> LabelCodec::one_hot(const std::string& label) const {
  std::vector<double> v(classes_.size(), 0.0);
  v[class_index(label)] = 1.0;
  return v;
}

const std::string& LabelCodec::decode_class(std::size_t index) const {
  STORM_CHECK(index < classes_.size(), ErrorKind::kData, "class index ", index, " outside ",
              classes_.size(), " classes");
  return classes_[index];
}

std::vector<double> LabelCodec::encode_target(const std::vector<double>& y) const {
  STORM_CHECK(y.size() == mean_.size(), ErrorKind::kData, "target has ", y.size(),
              " values, codec has ", mean_.size());
  std::vector<double> z(y.size());
  for (std::size_t j = 0; j < y.size(); ++j) z[j] = (y[j] - mean_[j]) / sd_[j];
  return z;
}

std::vector<double> LabelCodec::decode_target(const std::vector<double>& z) const {
  STORM_CHECK(z.size() == mean_.size(), ErrorKind::kData, "prediction has ", z.size(),
              " values, codec has ", mean_.size());
  std::vector<double> y(z.size());
  for (std::size_t j = 0; j < z.size(); ++j) y[j] = z[j] * sd_[j] + mean_[j];
  return y;
}

nlohmann::json LabelCodec::to_json() const {
  if (is_classification()) return {{"type", "classes"}, {"classes", classes_}};
  return {{"type", "zscore"}, {"mean", mean_}, {"sd", sd_}};
}

LabelCodec LabelCodec::from_json(const nlohmann::json& j) {
  LabelCodec c;
  const std::string type = j.at("type").get<std::string>();
  if (type == "classes") {
    c.classes_ = j.at("classes").get<std::vector<std::string>>();
    STORM_CHECK(std::is_sorted(c.classes_.begin(), c.classes_.end()) && c.classes_.size() >= 2,
                ErrorKind::kFormat, "label codec classes must be sorted and >= 2");
  } else if (type == "zscore") {
    c.mean_ = j.at("mean").get<std::vector<double>>();
    c.sd_ = j.at("sd").get<std::vector<double>>();
    STORM_CHECK(c.mean_.size() == c.sd_.size() && !c.mean_.empty(), ErrorKind::kFormat,
                "label codec mean/sd lengths differ");
  } else {
    fail(ErrorKind::kFormat, "unknown label codec type '", type, "'");
  }
  return c;
}

// ---- metrics -----------------------------------------------------------

double binary_auc(const std::vector<double>& scores, const std::vector<std::uint8_t>& positive) {
  STORM_CHECK(scores.size() == positive.size(), ErrorKind::kDimension, "AUC: ", scores.size(),
              " scores for ", positive.size(), " labels");
  const std::size_t n = scores.size();
  std::size_t n_pos = 0;
  for (auto p : positive) n_pos += p != 0;
  const std::size_t n_neg = n - n_pos;
  STORM_CHECK(n_pos > 0 && n_neg > 0, ErrorKind::kData,
              "AUC is undefined: targets contain a single class");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[idx[j]] == scores[idx[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t k = i; k < j; ++k)
      if (positive[idx[k]]) rank_sum += mid;
    i = j;
  }
  const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
  return (rank_sum - np * (np + 1) / 2) / (np * nn);
}

MetricRecord classification_metrics(const std::vector<std::vector<double>>& scores,
                                    const std::vector<std::size_t>& labels) {
  STORM_CHECK(scores.size() == labels.size() && !scores.empty(), ErrorKind::kDimension,
              "classification metrics: ", scores.size(), " predictions for ", labels.size(), " labels");
  const std::size_t c = scores.front().size();
  STORM_CHECK(c >= 2, ErrorKind::kDimension, "classification scores need >= 2 columns");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    STORM_CHECK(scores[i].size() == c, ErrorKind::kDimension, "ragged score rows");
    STORM_CHECK(labels[i] < c, ErrorKind::kData, "label ", labels[i], " outside ", c, " classes");
    const auto arg = static_cast<std::size_t>(
        std::max_element(scores[i].begin(), scores[i].end()) - scores[i].begin());
    correct += arg == labels[i];
  }
  MetricRecord m;
  m.values["accuracy"] = static_cast<double>(correct) / static_cast<double>(scores.size());

  auto column_auc = [&](std::size_t cls, bool margin) {
    std::vector<double> s(scores.size());
    std::vector<std::uint8_t> pos(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) {
      // Binary: margin of class 1 over class 0; ranking-equivalent to softmax.
      s[i] = margin ? scores[i][1] - scores[i][0] : scores[i][cls];
      pos[i] = labels[i] == cls;
    }
    return binary_auc(s, pos);
  };
  try {
    if (c == 2) {
      m.values["auc"] = column_auc(1, true);
    } else {
      double sum = 0;
      std::size_t used = 0;
      for (std::size_t k = 0; k < c; ++k) {
        if (std::find(labels.begin(), labels.end(), k) == labels.end()) continue;
        sum += column_auc(k, false);
        ++used;
      }
      STORM_CHECK(used >= 2, ErrorKind::kData, "AUC is undefined: targets contain a single class");
      if (used < c) m.flags.push_back("auc_partial_classes");
      m.values["auc"] = sum / static_cast<double>(used);
    }
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::kData) throw;
    m.flags.push_back("auc_undefined");
  }
  return m;
}

PearsonResult pearson(const std::vector<double>& a, const std::vector<double>& b) {
  STORM_CHECK(a.size() == b.size() && !a.empty(), ErrorKind::kDimension, "PCC: ", a.size(),
              " vs ", b.size(), " values");
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) ma += a[i], mb += b[i];
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return {0.0, true};
  return {sab / std::sqrt(saa * sbb), false};
}

MetricRecord regression_metrics(const std::vector<std::vector<double>>& pred,
                                const std::vector<std::vector<double>>& target) {
  STORM_CHECK(pred.size() == target.size() && !pred.empty(), ErrorKind::kDimension,
              "regression metrics: ", pred.size(), " predictions for ", target.size(), " targets");
  const std::size_t d = target.front().size();
  double se = 0, ae = 0, pcc = 0;
  bool degenerate = false;
  for (std::size_t j = 0; j < d; ++j) {
    std::vector<double> a(pred.size()), b(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i) {
      STORM_CHECK(pred[i].size() == d && target[i].size() == d, ErrorKind::kDimension,
                  "ragged regression rows");
      a[i] = pred[i][j];
      b[i] = target[i][j];
      se += (a[i] - b[i]) * (a[i] - b[i]);
      ae += std::abs(a[i] - b[i]);
    }
    const PearsonResult r = pearson(a, b);
    pcc += r.r;
    degenerate = degenerate || r.degenerate;
  }
  const double count = static_cast<double>(pred.size() * d);
  MetricRecord m;
  m.values["mse"] = se / count;
  m.values["mae"] = ae / count;
  m.values["pcc"] = pcc / static_cast<double>(d);
  if (degenerate) m.flags.push_back("pcc_degenerate");
  return m;
}

// ---- retrieval ---------------------------------------------------------

const char* retrieval_direction_name(RetrievalDirection d) {
  return d == RetrievalDirection::kBrainToImage ? "brain-to-image" : "image-to-brain";
}

namespace {

double norm_of(std::span<const double> v) {
  double s = 0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

void check_norms(const Embeddings& e, const char* what) {
  STORM_CHECK(e.values.size() == e.n * e.dim, ErrorKind::kDimension, what, " embeddings: ",
              e.values.size(), " values for ", e.n, " x ", e.dim);
  for (std::size_t i = 0; i < e.n; ++i)
    STORM_CHECK(norm_of(e.row(i)) > 0.0, ErrorKind::kData, what, " embedding ", i, " has zero norm");
}

}  // namespace

std::vector<std::size_t> rank_candidates(std::span<const double> query, const Embeddings& cand,
                                         std::size_t top) {
  STORM_CHECK(query.size() == cand.dim, ErrorKind::kDimension, "query width ", query.size(),
              " vs candidate width ", cand.dim);
  const double qn = norm_of(query);
  STORM_CHECK(qn > 0.0, ErrorKind::kData, "query embedding has zero norm");
  std::vector<double> sim(cand.n);
  for (std::size_t c = 0; c < cand.n; ++c) {
    const auto row = cand.row(c);
    const double cn = norm_of(row);
    STORM_CHECK(cn > 0.0, ErrorKind::kData, "candidate embedding ", c, " has zero norm");
    double dot = 0;
    for (std::size_t j = 0; j < cand.dim; ++j) dot += query[j] * row[j];
    sim[c] = dot / (qn * cn);
  }
  std::vector<std::size_t> idx(cand.n);
  std::iota(idx.begin(), idx.end(), 0);
  top = std::min(top, cand.n);
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(top), idx.end(),
                    [&](std::size_t a, std::size_t b) { return sim[a] > sim[b] || (sim[a] == sim[b] && a < b); });
  idx.resize(top);
  return idx;
}

std::array<double, 3> evaluate_pool(const RetrievalPool& pool) {
  STORM_CHECK(pool.truth.size() == pool.queries.n, ErrorKind::kDimension, "retrieval pool has ",
              pool.truth.size(), " ground truths for ", pool.queries.n, " queries");
  check_norms(pool.queries, "query");
  check_norms(pool.candidates, "candidate");
  std::array<double, 3> hits{};
  for (std::size_t q = 0; q < pool.queries.n; ++q) {
    STORM_CHECK(pool.truth[q] < pool.candidates.n, ErrorKind::kData, "ground truth ", pool.truth[q],
                " outside ", pool.candidates.n, " candidates");
    const auto ranked = rank_candidates(pool.queries.row(q), pool.candidates, 5);
    const auto pos = std::find(ranked.begin(), ranked.end(), pool.truth[q]) - ranked.begin();
    if (pos < 1) hits[0] += 1;
    if (pos < 3) hits[1] += 1;
    if (pos < 5) hits[2] += 1;
  }
  for (auto& h : hits) h /= static_cast<double>(pool.queries.n);
  return hits;
}

RetrievalReport retrieval_eval(const Embeddings& brain, const Embeddings& image,
                               const RetrievalConfig& cfg) {
  STORM_CHECK(brain.n == image.n, ErrorKind::kDimension, "retrieval needs matched pairs: ", brain.n,
              " brain vs ", image.n, " image embeddings");
  STORM_CHECK(brain.dim == image.dim, ErrorKind::kDimension, "embedding widths differ: ", brain.dim,
              " vs ", image.dim);
  STORM_CHECK(cfg.repeats >= 1, ErrorKind::kConfig, "retrieval needs >= 1 repeat");
  STORM_CHECK(cfg.n_queries >= 1 && cfg.n_queries <= brain.n, ErrorKind::kConfig, "retrieval asks for ",
              cfg.n_queries, " queries from ", brain.n, " pairs");
  const bool b2i = cfg.direction == RetrievalDirection::kBrainToImage;
  const Embeddings& q_all = b2i ? brain : image;
  const Embeddings& c_all = b2i ? image : brain;

  std::vector<std::array<double, 3>> runs;
  Rng root(cfg.seed, 0x52455452);
  std::vector<std::size_t> order(brain.n);
  for (std::size_t r = 0; r < cfg.repeats; ++r) {
    std::iota(order.begin(), order.end(), 0);
    Rng rng = root.split(r);
    for (std::size_t i = 0; i < cfg.n_queries; ++i)
      std::swap(order[i], order[i + rng.below(order.size() - i)]);
    RetrievalPool pool;
    pool.queries = {cfg.n_queries, q_all.dim, {}};
    pool.candidates = {cfg.n_queries, c_all.dim, {}};
    for (std::size_t i = 0; i < cfg.n_queries; ++i) {
      const auto qr = q_all.row(order[i]);
      const auto cr = c_all.row(order[i]);
      pool.queries.values.insert(pool.queries.values.end(), qr.begin(), qr.end());
      pool.candidates.values.insert(pool.candidates.values.end(), cr.begin(), cr.end());
      pool.truth.push_back(i);
    }
    runs.push_back(evaluate_pool(pool));
  }
  RetrievalReport rep;
  rep.direction = cfg.direction;
  rep.n_queries = cfg.n_queries;
  rep.repeats = cfg.repeats;
  std::array<double, 3> mean{}, sd{};
  for (const auto& r : runs)
    for (int k = 0; k < 3; ++k) mean[k] += r[k];
  for (auto& m : mean) m /= static_cast<double>(runs.size());
  if (runs.size() > 1) {
    for (const auto& r : runs)
      for (int k = 0; k < 3; ++k) sd[k] += (r[k] - mean[k]) * (r[k] - mean[k]);
    for (auto& s : sd) s = std::sqrt(s / static_cast<double>(runs.size() - 1));
  }
  rep.top1 = mean[0], rep.top3 = mean[1], rep.top5 = mean[2];
  rep.top1_sd = sd[0], rep.top3_sd = sd[1], rep.top5_sd = sd[2];
  STORM_CHECK(rep.top1 <= rep.top3 && rep.top3 <= rep.top5, ErrorKind::kInternal,
              "retrieval rates not monotone in m");
  return rep;
}

// ---- tfMRI clips -------------------------------------------------------

std::vector<std::size_t> frame_window(std::size_t n_frames, std::size_t k, ClipMode mode, Rng* rng) {
  STORM_CHECK(k >= 1, ErrorKind::kConfig, "clip length must be >= 1");
  STORM_CHECK(n_frames >= 1, ErrorKind::kData, "cannot extract a clip from an empty sequence");
  std::size_t start = 0;
  if (mode == ClipMode::kRandomTrain) {
    STORM_CHECK(rng != nullptr, ErrorKind::kContract, "random clip extraction needs an rng");
    start = rng->below(n_frames >= k ? n_frames - k + 1 : n_frames);
  }
  std::vector<std::size_t> idx(k);
  for (std::size_t i = 0; i < k; ++i) idx[i] = (start + i) % n_frames;
  return idx;
}

Tensor frame_window_extract(const Tensor& volume, std::size_t k, ClipMode mode, Rng* rng) {
  STORM_CHECK(volume.rank() == 4, ErrorKind::kDimension, "clip extraction expects [T,Z,Y,X], got ",
              shape_str(volume.shape()));
  const auto idx = frame_window(volume.dim(0), k, mode, rng);
  const std::size_t frame = volume.numel() / volume.dim(0);
  std::vector<Scalar> out(k * frame);
  const auto src = volume.data();
  for (std::size_t i = 0; i < k; ++i)
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(idx[i] * frame), frame,
                out.begin() + static_cast<std::ptrdiff_t>(i * frame));
  return Tensor({k, volume.dim(1), volume.dim(2), volume.dim(3)}, std::move(out));
}

// ---- benchmark ---------------------------------------------------------

std::vector<BenchmarkRecord> run_benchmark(std::size_t n, const BenchmarkConfig& cfg,
                                           const BenchmarkRunner& runner) {
  STORM_CHECK(!cfg.scarcities.empty() && !cfg.seeds.empty(), ErrorKind::kConfig,
              "benchmark needs >= 1 scarcity level and >= 1 seed");
  std::vector<BenchmarkRecord> out;
  for (double s : cfg.scarcities)
    for (std::uint64_t seed : cfg.seeds) {
      const SplitPlan split = make_split(n, seed, s);
      const MetricRecord m = runner(split, seed);
      for (const auto& [name, value] : m.values)
        out.push_back({cfg.task_name, cfg.dataset, s, seed, name, value});
    }
  return out;
}

BenchmarkRunner prompt_tuning_runner(const Encoder& backbone, const TaskData& data,
                                     const PromptRunnerConfig& cfg) {
  const TaskFamily family = task_family(data.kind);
  STORM_CHECK(family != TaskFamily::kRetrieval, ErrorKind::kConfig,
              "retrieval is evaluated with retrieval_eval, not a tuning runner");
  const std::size_t n = data.volumes.size();
  STORM_CHECK(family == TaskFamily::kClassification ? data.labels.size() == n : data.targets.size() == n,
              ErrorKind::kData, "task data has ", n, " volumes but a different number of labels");
  return [&backbone, &data, cfg, family](const SplitPlan& split, std::uint64_t seed) {
    const bool clips = data.kind == TaskKind::kStateClassification;
    LabelCodec codec;
    if (family == TaskFamily::kClassification) {
      // The class list is task metadata, so a scarce split missing a class
      // still gets the full head.
      codec = LabelCodec::fit_classes(data.labels);
    } else {
      std::vector<std::vector<double>> tr;
      for (auto i : split.train) tr.push_back(data.targets[i]);
      codec = LabelCodec::fit_targets(tr);
    }
    auto sample_of = [&](std::size_t i, bool eval) {
      Sample s;
      s.volume = clips && eval ? frame_window_extract(data.volumes[i], cfg.clip_frames, ClipMode::kFirstEval, nullptr)
                               : data.volumes[i];
      if (family == TaskFamily::kClassification)
        s.label = codec.class_index(data.labels[i]);
      else
        s.target = codec.encode_target(data.targets[i]);
      return s;
    };
    std::vector<Sample> train, test;
    for (auto i : split.train) train.push_back(sample_of(i, false));

    TuneConfig tc = cfg.tune;
    tc.seed = seed;
    tc.head.kind = family == TaskFamily::kClassification ? HeadKind::kClassification : HeadKind::kRegression;
    tc.head.out_dim = codec.n_outputs();
    if (clips) {
      const std::size_t k = cfg.clip_frames;
      tc.view = [k](const Sample& s, Rng& rng) {
        return frame_window_extract(s.volume, k, ClipMode::kRandomTrain, &rng);
      };
    }
    const TuneResult tuned = finetune(backbone, train, tc);

    std::vector<std::size_t> labels;
    std::vector<std::vector<double>> truth;
    for (auto i : split.test) {
      test.push_back(sample_of(i, true));
      if (family == TaskFamily::kClassification)
        labels.push_back(test.back().label);
      else
        truth.push_back(data.targets[i]);
    }
    const auto out = predict(backbone, tuned.state, test);
    MetricRecord m;
    if (family == TaskFamily::kClassification) {
      m = classification_metrics(out, labels);
    } else {
      std::vector<std::vector<double>> decoded;
      for (const auto& o : out) decoded.push_back(codec.decode_target(o));
      m = regression_metrics(decoded, truth);
    }
    m.values["trainable_fraction"] = tuned.trainable_fraction;
    return m;
  };
}

nlohmann::json to_json(const BenchmarkRecord& r) {
  return {{"task", r.task},     {"dataset", r.dataset}, {"scarcity", r.scarcity},
          {"seed", r.seed},     {"metric", r.metric},   {"value", r.value}};
}

void write_jsonl(const std::filesystem::path& path, const std::vector<BenchmarkRecord>& records) {
  std::ofstream out(path);
  STORM_CHECK(out.good(), ErrorKind::kData, "cannot write ", path.string());
  for (const auto& r : records) out << to_json(r).dump() << '\n';
  STORM_CHECK(out.good(), ErrorKind::kData, "short write to ", path.string());
}

std::vector<BenchmarkRecord> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  STORM_CHECK(in.good(), ErrorKind::kData, "cannot open ", path.string());
  std::vector<BenchmarkRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out.push_back({j.at("task").get<std::string>(), j.at("dataset").get<std::string>(),
                     j.at("scarcity").get<double>(), j.at("seed").get<std::uint64_t>(),
                     j.at("metric").get<std::string>(), j.at("value").get<double>()});
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::kFormat, path.string(), ":", lineno, ": ", e.what());
    }
  }
  return out;
}

void write_summary_csv(const std::filesystem::path& path, const std::vector<BenchmarkRecord>& records) {
  using Key = std::tuple<std::string, std::string, double, std::string>;
  std::map<Key, std::vector<double>> groups;
  for (const auto& r : records) groups[{r.task, r.dataset, r.scarcity, r.metric}].push_back(r.value);
  std::ofstream out(path);
  STORM_CHECK(out.good(), ErrorKind::kData, "cannot write ", path.string());
  out << "task,dataset,scarcity,metric,n,mean,sd\n";
  out << std::setprecision(10);
  for (const auto& [key, v] : groups) {
    double m = 0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    double s = 0;
    for (double x : v) s += (x - m) * (x - m);
    s = v.size() > 1 ? std::sqrt(s / static_cast<double>(v.size() - 1)) : 0.0;
    out << std::get<0>(key) << ',' << std::get<1>(key) << ',' << std::get<2>(key) << ','
        << std::get<3>(key) << ',' << v.size() << ',' << m << ',' << s << '\n';
  }
}

std::uint64_t records_hash(const std::vector<BenchmarkRecord>& records) {
  std::string blob;
  for (const auto& r : records) blob += to_json(r).dump() + '\n';
  return fnv1a64({reinterpret_cast<const std::uint8_t*>(blob.data()), blob.size()});
}

// ---- paired retrieval embeddings ---------------------------------------

PairedEncoderResult train_paired_encoder(const Encoder& backbone, const std::vector<Sample>& train,
                                         const std::vector<Sample>& eval, const TuneConfig& config) {
  STORM_CHECK(!train.empty() && !eval.empty(), ErrorKind::kConfig,
              "paired encoder needs training and evaluation samples");
  const std::size_t d = train.front().target.size();
  STORM_CHECK(d >= 1, ErrorKind::kData, "paired samples need target embeddings");
  TuneConfig tc = config;
  tc.head.kind = HeadKind::kEmbedding;
  tc.head.out_dim = d;
  PairedEncoderResult r;
  r.tuned = finetune(backbone, train, tc);
  const auto out = predict(backbone, r.tuned.state, eval);
  r.brain = {eval.size(), d, {}};
  r.image = {eval.size(), d, {}};
  for (std::size_t i = 0; i < eval.size(); ++i) {
    STORM_CHECK(eval[i].target.size() == d, ErrorKind::kData, "eval sample ", i, " target width ",
                eval[i].target.size(), " vs ", d);
    r.brain.values.insert(r.brain.values.end(), out[i].begin(), out[i].end());
    r.image.values.insert(r.image.values.end(), eval[i].target.begin(), eval[i].target.end());
  }
  return r;
}

}  // namespace storm::inline STORM_PREC_NS
