#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "storm/harness/harness.hpp"
#include "storm/io/preprocess.hpp"
#include "storm/io/synth.hpp"
#include "test_util.hpp"

using namespace storm;

namespace {

EncoderConfig tiny_config() {
  EncoderConfig c;
  c.variant = "tiny";
  c.embed_dim = 4;
  c.depths = {2, 1};
  c.window = {2, 2, 2, 2};
  c.d_state = 2;
  c.mlp_ratio = 1;
  c.head_dim = 2;
  c.seed = 3;
  return c;
}

Embeddings random_embeddings(Rng& rng, std::size_t n, std::size_t dim) {
  Embeddings e{n, dim, std::vector<double>(n * dim)};
  for (auto& v : e.values) v = rng.normal();
  return e;
}

// Brute-force AUC: fraction of (positive, negative) pairs ordered correctly,
// ties counted half.
double pairwise_auc(const std::vector<double>& s, const std::vector<std::uint8_t>& pos) {
  double good = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (pos[i] && !pos[j]) {
        pairs += 1;
        good += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
      }
  return good / pairs;
}

}  // namespace

TEST_CASE("split: 8:1:1 counts, disjoint and covering") {
  const SplitPlan p = make_split(100, 7);
  CHECK(p.train.size() == 80);
  CHECK(p.val.size() == 10);
  CHECK(p.test.size() == 10);
  std::set<std::size_t> all(p.train.begin(), p.train.end());
  all.insert(p.val.begin(), p.val.end());
  all.insert(p.test.begin(), p.test.end());
  CHECK(all.size() == 100);
  CHECK(*all.rbegin() == 99);

  const SplitPlan r = make_split(105, 7);
  CHECK(r.train.size() == 85);
  CHECK(r.val.size() == 10);
  CHECK(make_split(100, 7).train == p.train);
  CHECK(make_split(100, 8).train != p.train);
}

TEST_CASE("split: scarcity touches train only") {
  const SplitPlan full = make_split(100, 3);
  const SplitPlan half = make_split(100, 3, 0.5);
  CHECK(half.train.size() == 40);
  CHECK(half.val.size() == 10);
  CHECK(half.test.size() == 10);
  CHECK(half.val == full.val);
  CHECK(half.test == full.test);
  for (auto i : half.train) CHECK(std::binary_search(full.train.begin(), full.train.end(), i));
  CHECK(make_split(10, 1, 0.1).train.size() == 1);
  for (double s : kScarcityLevels) CHECK(make_split(50, 2, s).val == make_split(50, 2).val);
}

TEST_CASE("split: errors") {
  CHECK_THROWS_AS(make_split(9, 0), Error);
  CHECK_THROWS_AS(make_split(100, 0, 0.0), Error);
  CHECK_THROWS_AS(make_split(100, 0, 1.5), Error);
}

TEST_CASE("codec: one-hot classes") {
  const LabelCodec c = LabelCodec::fit_classes({"c", "a", "d", "b", "a"});
  CHECK(c.classes() == std::vector<std::string>{"a", "b", "c", "d"});
  CHECK(c.one_hot("c") == std::vector<double>{0, 0, 1, 0});
  CHECK(c.decode_class(c.class_index("d")) == "d");
  try {
    c.class_index("e");
    FAIL("expected a data error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kData);
    CHECK(std::string(e.what()).find("'e'") != std::string::npos);
  }
  CHECK_THROWS_AS(LabelCodec::fit_classes({"x", "x"}), Error);
  const LabelCodec back = LabelCodec::from_json(c.to_json());
  CHECK(back.classes() == c.classes());
}

TEST_CASE("codec: z-score targets") {
  const LabelCodec c = LabelCodec::fit_targets({{20}, {40}});
  CHECK(c.encode_target({20}) == std::vector<double>{-1});
  CHECK(c.encode_target({40}) == std::vector<double>{1});
  CHECK(c.decode_target({-1})[0] == 20);
  CHECK(c.decode_target({1})[0] == 40);

  Rng rng(1);
  std::vector<std::vector<double>> ys(50, std::vector<double>(3));
  for (auto& y : ys)
    for (auto& v : y) v = rng.uniform(-100, 300);
  const LabelCodec r = LabelCodec::fit_targets(ys);
  double worst = 0;
  for (const auto& y : ys) {
    const auto back = r.decode_target(r.encode_target(y));
    for (std::size_t j = 0; j < 3; ++j) worst = std::max(worst, std::abs(back[j] - y[j]));
  }
  CHECK(worst < 1e-6);
  const LabelCodec j = LabelCodec::from_json(r.to_json());
  CHECK(j.mean() == r.mean());
  CHECK(j.sd() == r.sd());
  CHECK_THROWS_AS(LabelCodec::fit_targets({{1}, {1}}), Error);
}

TEST_CASE("metrics: AUC equals the pairwise oracle") {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> s(200);
    std::vector<std::uint8_t> pos(200);
    for (std::size_t i = 0; i < 200; ++i) {
      pos[i] = rng.bernoulli(0.4);
      // Coarse rounding on odd trials forces ties.
      const double v = rng.normal() + (pos[i] ? 0.5 : 0.0);
      s[i] = trial % 2 ? std::round(v * 2) / 2 : v;
    }
    CHECK(binary_auc(s, pos) == doctest::Approx(pairwise_auc(s, pos)).epsilon(1e-14));
  }
  CHECK_THROWS_AS(binary_auc({0.1, 0.2}, {1, 1}), Error);
}

TEST_CASE("metrics: perfect and constant predictions") {
  const MetricRecord c = classification_metrics({{2, 0}, {0, 3}, {1, -1}, {-2, 2}}, {0, 1, 0, 1});
  CHECK(c.values.at("accuracy") == 1.0);
  CHECK(c.values.at("auc") == 1.0);

  const MetricRecord m3 =
      classification_metrics({{3, 0, 0}, {0, 3, 0}, {0, 0, 3}, {2, 1, 0}}, {0, 1, 2, 0});
  CHECK(m3.values.at("accuracy") == 1.0);
  CHECK(m3.values.at("auc") == 1.0);

  const MetricRecord single = classification_metrics({{1, 0}, {0, 1}}, {1, 1});
  CHECK(single.values.count("auc") == 0);
  CHECK(single.flags == std::vector<std::string>{"auc_undefined"});

  const std::vector<std::vector<double>> y{{1, 10}, {2, 20}, {3, 40}};
  const MetricRecord r = regression_metrics(y, y);
  CHECK(r.values.at("mse") == 0.0);
  CHECK(r.values.at("mae") == 0.0);
  CHECK(r.values.at("pcc") == doctest::Approx(1.0));
  CHECK(r.flags.empty());

  const MetricRecord flat = regression_metrics({{5}, {5}, {5}}, {{1}, {2}, {3}});
  CHECK(flat.values.at("pcc") == 0.0);
  CHECK(flat.flags == std::vector<std::string>{"pcc_degenerate"});
  CHECK(flat.values.at("mse") == doctest::Approx((16.0 + 9 + 4) / 3));
  CHECK(flat.values.at("mae") == doctest::Approx(3.0));
}

TEST_CASE("metrics: Pearson against a hand value") {
  const PearsonResult r = pearson({1, 2, 3, 4}, {2, 1, 4, 3});
  CHECK(r.r == doctest::Approx(0.6));
  CHECK(!r.degenerate);
}

TEST_CASE("retrieval: oracle embeddings rank the ground truth first") {
  Rng rng(3);
  const Embeddings e = random_embeddings(rng, 400, 16);
  for (auto dir : {RetrievalDirection::kBrainToImage, RetrievalDirection::kImageToBrain}) {
    RetrievalConfig cfg;
    cfg.repeats = 5;
    cfg.direction = dir;
    const RetrievalReport r = retrieval_eval(e, e, cfg);
    CHECK(r.top1 == 1.0);
    CHECK(r.top5 == 1.0);
    CHECK(r.top1_sd == 0.0);
  }
}

TEST_CASE("retrieval: independent embeddings sit at chance") {
  Rng rng(4);
  const Embeddings brain = random_embeddings(rng, 600, 32);
  const Embeddings image = random_embeddings(rng, 600, 32);
  const RetrievalReport r = retrieval_eval(brain, image, {});
  MESSAGE("top1 ", r.top1, " top3 ", r.top3, " top5 ", r.top5);
  CHECK(std::abs(r.top1 - 1.0 / 300) <= 0.005);
  CHECK(r.top1 <= r.top3);
  CHECK(r.top3 <= r.top5);
  CHECK(std::abs(r.top5 - 5.0 / 300) <= 0.01);
}

TEST_CASE("retrieval: noisy copies at cosine 0.8 are recovered") {
  Rng rng(5);
  const std::size_t n = 300, d = 64;
  Embeddings img = random_embeddings(rng, n, d);
  Embeddings brain{n, d, std::vector<double>(n * d)};
  for (std::size_t i = 0; i < n; ++i) {
    // unit c, unit noise u orthogonal to c; q = 0.8 c + 0.6 u.
    std::vector<double> c(img.row(i).begin(), img.row(i).end()), u(d);
    double cn = 0;
    for (double v : c) cn += v * v;
    cn = std::sqrt(cn);
    for (auto& v : c) v /= cn;
    for (auto& v : u) v = rng.normal();
    double dot = 0;
    for (std::size_t j = 0; j < d; ++j) dot += u[j] * c[j];
    double un = 0;
    for (std::size_t j = 0; j < d; ++j) u[j] -= dot * c[j], un += u[j] * u[j];
    for (std::size_t j = 0; j < d; ++j) brain.values[i * d + j] = 0.8 * c[j] + 0.6 * u[j] / std::sqrt(un);
  }
  RetrievalConfig cfg;
  cfg.repeats = 3;
  const RetrievalReport r = retrieval_eval(brain, img, cfg);
  CHECK(r.top1 > 0.95);
  cfg.direction = RetrievalDirection::kImageToBrain;
  CHECK(retrieval_eval(brain, img, cfg).top1 > 0.95);
}

TEST_CASE("retrieval: validation") {
  Rng rng(6);
  Embeddings a = random_embeddings(rng, 10, 4);
  const Embeddings b = random_embeddings(rng, 10, 4);
  RetrievalConfig cfg;
  cfg.n_queries = 10;
  cfg.repeats = 1;
  CHECK_NOTHROW(retrieval_eval(a, b, cfg));
  cfg.n_queries = 11;
  CHECK_THROWS_AS(retrieval_eval(a, b, cfg), Error);
  cfg.n_queries = 10;
  for (std::size_t j = 0; j < 4; ++j) a.values[3 * 4 + j] = 0;
  try {
    retrieval_eval(a, b, cfg);
    FAIL("expected a data error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kData);
  }
  const auto order = rank_candidates(std::vector<double>{1, 0, 0, 0},
                                     Embeddings{3, 4, {0, 1, 0, 0, 2, 0, 0, 0, 1, 1, 0, 0}}, 3);
  CHECK(order == std::vector<std::size_t>{1, 2, 0});
}

TEST_CASE("clips: looping rule on hand-built sequences") {
  auto range = [](std::size_t a, std::size_t b) {
    std::vector<std::size_t> v;
    for (std::size_t i = a; i < b; ++i) v.push_back(i);
    return v;
  };
  CHECK(frame_window(100, 40, ClipMode::kFirstEval, nullptr) == range(0, 40));
  CHECK(frame_window(40, 40, ClipMode::kFirstEval, nullptr) == range(0, 40));
  auto looped = range(0, 25);
  const auto tail = range(0, 15);
  looped.insert(looped.end(), tail.begin(), tail.end());
  CHECK(frame_window(25, 40, ClipMode::kFirstEval, nullptr) == looped);
  CHECK(frame_window(1, 3, ClipMode::kFirstEval, nullptr) == std::vector<std::size_t>{0, 0, 0});
  CHECK_THROWS_AS(frame_window(0, 40, ClipMode::kFirstEval, nullptr), Error);
  CHECK_THROWS_AS(frame_window(10, 40, ClipMode::kRandomTrain, nullptr), Error);

  Rng rng(7);
  for (std::size_t t : {25, 40, 100}) {
    // Frame f of the tensor holds the value f everywhere.
    std::vector<Scalar> v(t * 8);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<Scalar>(i / 8);
    const Tensor vol({t, 2, 2, 2}, std::move(v));
    for (auto mode : {ClipMode::kFirstEval, ClipMode::kRandomTrain}) {
      const Tensor clip = frame_window_extract(vol, 40, mode, &rng);
      CHECK(clip.shape() == Shape{40, 2, 2, 2});
      const std::size_t start = static_cast<std::size_t>(clip.data()[0]);
      if (mode == ClipMode::kFirstEval) CHECK(start == 0);
      for (std::size_t f = 0; f < 40; ++f)
        CHECK(clip.data()[f * 8 + 7] == static_cast<Scalar>((start + f) % t));
    }
  }
}

TEST_CASE("clips: training starts are uniform") {
  // 99th percentile of chi-square with 60 degrees of freedom.
  const double crit = 88.379;
  Rng rng(8);
  std::vector<double> counts(61, 0.0);
  const std::size_t draws = 10000;
  for (std::size_t i = 0; i < draws; ++i) counts[frame_window(100, 40, ClipMode::kRandomTrain, &rng)[0]] += 1;
  const double expect = static_cast<double>(draws) / 61.0;
  double chi2 = 0;
  for (double c : counts) chi2 += (c - expect) * (c - expect) / expect;
  MESSAGE("chi2 ", chi2);
  CHECK(chi2 < crit);
  // Short sequences start anywhere in the sequence.
  std::set<std::size_t> starts;
  for (int i = 0; i < 2000; ++i) starts.insert(frame_window(25, 40, ClipMode::kRandomTrain, &rng)[0]);
  CHECK(starts.size() == 25);
}

TEST_CASE("benchmark: records per scarcity and seed, deterministic, reports roundtrip") {
  BenchmarkConfig cfg;
  cfg.task_name = "toy";
  auto runner = [](const SplitPlan& split, std::uint64_t seed) {
    MetricRecord m;
    m.values["accuracy"] = static_cast<double>(split.train.size()) / 100.0 + 0.001 * static_cast<double>(seed);
    return m;
  };
  const auto recs = run_benchmark(100, cfg, runner);
  CHECK(recs.size() == 4 * 3);
  CHECK(records_hash(recs) == records_hash(run_benchmark(100, cfg, runner)));
  std::set<std::pair<double, std::uint64_t>> keys;
  for (const auto& r : recs) keys.insert({r.scarcity, r.seed});
  CHECK(keys.size() == 12);

  const auto dir = std::filesystem::temp_directory_path() / "storm_harness_test";
  std::filesystem::create_directories(dir);
  write_jsonl(dir / "r.jsonl", recs);
  const auto back = read_jsonl(dir / "r.jsonl");
  CHECK(records_hash(back) == records_hash(recs));
  write_summary_csv(dir / "s.csv", recs);
  std::ifstream in(dir / "s.csv");
  std::string header, line;
  std::getline(in, header);
  CHECK(header == "task,dataset,scarcity,metric,n,mean,sd");
  std::size_t rows = 0;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 4);

  std::ofstream(dir / "bad.jsonl") << "{\"task\": 1}\n";
  try {
    read_jsonl(dir / "bad.jsonl");
    FAIL("expected a format error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kFormat);
  }
}

TEST_CASE("benchmark: prompt tuning on a separable task is not worse with more data") {
  TaskData data;
  data.kind = TaskKind::kGenderClassification;
  for (std::size_t i = 0; i < 60; ++i) {
    SynthConfig sc;
    sc.seed = 500 + i;
    sc.dims = {2, 8, 8, 8};
    sc.n_latent_networks = 2;
    sc.noise_sd = 0.1;
    sc.map_seed = 5;
    sc.amplitudes = {i % 2 ? 1.0 : -1.0};
    data.volumes.push_back(
        volume_tensor(normalize_intensity(synth_fmri(sc).volume, NormalizeMode::kGlobalZscore).volume));
    data.labels.push_back(i % 2 ? "F" : "M");
  }
  const Encoder enc(tiny_config());
  PromptRunnerConfig pc;
  pc.tune.k = 2;
  pc.tune.steps = 60;
  pc.tune.batch_size = 2;
  pc.tune.adam.lr = 1e-2;
  pc.tune.max_trainable_fraction = 1.0;
  BenchmarkConfig cfg;
  cfg.task_name = task_kind_name(data.kind);
  const auto recs = run_benchmark(60, cfg, prompt_tuning_runner(enc, data, pc));
  std::map<double, double> acc;
  std::size_t n_acc = 0;
  for (const auto& r : recs)
    if (r.metric == "accuracy") acc[r.scarcity] += r.value / 3.0, ++n_acc;
  CHECK(n_acc == 12);
  MESSAGE("accuracy at 10% ", acc[0.1], ", at 100% ", acc[1.0]);
  CHECK(acc[1.0] >= acc[0.1]);
  const auto again = run_benchmark(60, cfg, prompt_tuning_runner(enc, data, pc));
  CHECK(records_hash(again) == records_hash(recs));
}

TEST_CASE("benchmark: state classification evaluates on clips") {
  TaskData data;
  data.kind = TaskKind::kStateClassification;
  Rng rng(9);
  for (std::size_t i = 0; i < 20; ++i) {
    data.volumes.push_back(test::randn(rng, {3 + i % 4, 4, 4, 4}));
    data.labels.push_back(i % 2 ? "rest" : "task");
  }
  const Encoder enc(tiny_config());
  PromptRunnerConfig pc;
  pc.clip_frames = 4;
  pc.tune.k = 1;
  pc.tune.steps = 3;
  pc.tune.batch_size = 1;
  pc.tune.max_trainable_fraction = 1.0;
  const MetricRecord m = prompt_tuning_runner(enc, data, pc)(make_split(20, 1), 1);
  CHECK(m.values.count("accuracy") == 1);
  CHECK(m.values.at("trainable_fraction") > 0);
}

TEST_CASE("benchmark: regression runner reports on the original scale") {
  TaskData data;
  data.kind = TaskKind::kAgeRegression;
  Rng rng(10);
  for (std::size_t i = 0; i < 20; ++i) {
    data.volumes.push_back(test::randn(rng, {2, 4, 4, 4}));
    data.targets.push_back({20.0 + static_cast<double>(i)});
  }
  const Encoder enc(tiny_config());
  PromptRunnerConfig pc;
  pc.tune.k = 1;
  pc.tune.steps = 2;
  pc.tune.batch_size = 1;
  pc.tune.max_trainable_fraction = 1.0;
  const MetricRecord m = prompt_tuning_runner(enc, data, pc)(make_split(20, 2), 2);
  // Untrained predictions sit near the training mean, several years off.
  CHECK(m.values.at("mae") > 1.0);
  CHECK(m.values.count("pcc") == 1);
}

TEST_CASE("paired encoder: embeddings have the target width") {
  const Encoder enc(tiny_config());
  Rng rng(11);
  std::vector<Sample> train, eval;
  for (std::size_t i = 0; i < 6; ++i) {
    Sample s{test::randn(rng, {2, 4, 4, 4}), 0, {rng.normal(), rng.normal(), rng.normal()}};
    (i < 4 ? train : eval).push_back(s);
  }
  TuneConfig cfg;
  cfg.k = 1;
  cfg.steps = 5;
  cfg.batch_size = 1;
  cfg.max_trainable_fraction = 1.0;
  const PairedEncoderResult r = train_paired_encoder(enc, train, eval, cfg);
  CHECK(r.brain.n == 2);
  CHECK(r.brain.dim == 3);
  std::vector<double> expect = eval[0].target;
  expect.insert(expect.end(), eval[1].target.begin(), eval[1].target.end());
  CHECK(r.image.values == expect);
  CHECK(r.brain.values.size() == 6);
}

TEST_CASE("tasks: names and metrics") {
  for (auto k : {TaskKind::kGenderClassification, TaskKind::kAgeRegression, TaskKind::kPhenotypeRegression,
                 TaskKind::kDiseaseClassification, TaskKind::kRetrieval, TaskKind::kStateClassification})
    CHECK(parse_task_kind(task_kind_name(k)) == k);
  CHECK_THROWS_AS(parse_task_kind("nope"), Error);
  CHECK(task_metrics(TaskKind::kAgeRegression) == std::vector<std::string>{"mse", "mae", "pcc"});
}
