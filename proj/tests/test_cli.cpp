// Command-line and C interface behaviour: run directories, determinism,
// checkpoint compatibility errors and handle/argument validation.

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "storm/storm.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Scratch {
  fs::path dir;
  explicit Scratch(const std::string& tag) {
    dir = fs::temp_directory_path() / ("storm-cli-" + tag + "-" + std::to_string(::getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Scratch() { fs::remove_all(dir); }
};

struct Result {
  int code = -1;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Result cli(const fs::path& work, const std::string& args) {
  const fs::path out = work / "stdout.txt", err = work / "stderr.txt";
  const std::string cmd = std::string("'") + STORM_CLI_PATH + "' --log-level warn --run-root '" +
                          (work / "runs").string() + "' " + args + " >'" + out.string() + "' 2>'" +
                          err.string() + "'";
  const int raw = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  while (!r.out.empty() && (r.out.back() == '\n' || r.out.back() == ' ')) r.out.pop_back();
  return r;
}

std::vector<json> jsonl(const fs::path& p) {
  std::vector<json> v;
  std::ifstream in(p);
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) v.push_back(json::parse(line));
  return v;
}

std::string tree_digest(const fs::path& root) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) files.push_back(fs::relative(e.path(), root));
  std::sort(files.begin(), files.end());
  std::string all;
  for (const auto& f : files) all += f.string() + '\0' + slurp(root / f) + '\0';
  return all;
}

const char* kSmallSynth = "synth n_volumes=8 dims=8,16,16,16 seed=7";

}  // namespace

TEST_CASE("synth with a fixed seed reproduces identical files") {
  Scratch s("synth");
  const Result a = cli(s.dir, kSmallSynth);
  const Result b = cli(s.dir, kSmallSynth);
  REQUIRE(a.code == 0);
  REQUIRE(b.code == 0);
  CHECK(a.out != b.out);  // distinct run directories
  const std::string da = tree_digest(fs::path(a.out) / "data");
  CHECK(da.size() > 8 * 8 * 16 * 16 * 16 * 4);
  CHECK(da == tree_digest(fs::path(b.out) / "data"));
  const json manifest = json::parse(slurp(fs::path(a.out) / "data" / "dataset.json"));
  CHECK(manifest.at("files").size() == 8);

  const Result c = cli(s.dir, "synth n_volumes=8 dims=8,16,16,16 seed=8");
  REQUIRE(c.code == 0);
  CHECK(tree_digest(fs::path(c.out) / "data") != da);
}

TEST_CASE("run directory holds a reloadable resolved configuration") {
  Scratch s("config");
  const Result a = cli(s.dir, "synth n_volumes=2 dims=4,8,8,8 seed=11 noise_sd=0.2");
  REQUIRE(a.code == 0);
  const fs::path run(a.out);
  CHECK(run.filename().string().find("-synth-seed11") != std::string::npos);
  CHECK(fs::exists(run / "summary.json"));
  const std::string text = slurp(run / "config.txt");
  CHECK(text.find("noise_sd = 0.2") != std::string::npos);

  // Rerunning from the saved file gives the same data.
  const Result b = cli(s.dir, "synth --config '" + (run / "config.txt").string() + "'");
  REQUIRE(b.code == 0);
  CHECK(slurp(fs::path(b.out) / "config.txt") == text);
  CHECK(tree_digest(run / "data") == tree_digest(fs::path(b.out) / "data"));
}

TEST_CASE("unknown keys and malformed values are config errors") {
  Scratch s("keys");
  Result r = cli(s.dir, "synth bogus=1");
  CHECK(r.code == STORM_ERR_CONFIG);
  CHECK(r.err.find("error [config]") != std::string::npos);
  CHECK(r.err.find("bogus") != std::string::npos);
  CHECK(!fs::exists(s.dir / "runs"));

  r = cli(s.dir, "synth n_volumes=abc");
  CHECK(r.code == STORM_ERR_CONFIG);
  CHECK(r.err.find("n_volumes") != std::string::npos);

  std::ofstream(s.dir / "bad.txt") << "seed = 3\nnot an assignment\n";
  r = cli(s.dir, "synth --config '" + (s.dir / "bad.txt").string() + "'");
  CHECK(r.code == STORM_ERR_CONFIG);
  CHECK(r.err.find("bad.txt:2") != std::string::npos);

  r = cli(s.dir, "pretrain data=" + (s.dir / "nope").string());
  CHECK(r.code == STORM_ERR_DATA);
}

TEST_CASE("pretrain, then loading under another variant fails with a config error") {
  Scratch s("pretrain");
  const Result syn = cli(s.dir, "synth n_volumes=10 dims=8,16,16,16 seed=7");
  REQUIRE(syn.code == 0);
  const std::string data = (fs::path(syn.out) / "data").string();

  const Result pre = cli(s.dir, "pretrain data=" + data + " steps=50 batch_size=2 log_every=1 seed=3");
  REQUIRE_MESSAGE(pre.code == 0, pre.err);
  const fs::path run(pre.out);
  CHECK(fs::exists(run / "encoder.ckpt"));
  const auto losses = jsonl(run / "loss.jsonl");
  REQUIRE(losses.size() == 50);
  for (const auto& l : losses) CHECK(std::isfinite(l.at("loss").get<double>()));
  const std::string ckpt = (run / "encoder.ckpt").string();

  Result r = cli(s.dir, "finetune data=" + data + " checkpoint=" + ckpt + " variant=Large steps=1");
  CHECK(r.code == STORM_ERR_CONFIG);
  CHECK(r.err.find("variant") != std::string::npos);
  CHECK(r.err.find("more") != std::string::npos);  // long shape list is truncated
  CHECK(std::count(r.err.begin(), r.err.end(), '\n') < 20);

  const Result ft = cli(s.dir, "finetune data=" + data + " checkpoint=" + ckpt + " steps=2 batch_size=1");
  REQUIRE_MESSAGE(ft.code == 0, ft.err);
  const std::string prompt = (fs::path(ft.out) / "prompt.ckpt").string();
  r = cli(s.dir, "eval data=" + data + " checkpoint=" + ckpt + " prompt=" + prompt + " variant=LongSeq");
  CHECK(r.code == STORM_ERR_CONFIG);
  r = cli(s.dir, "eval data=" + data + " checkpoint=" + ckpt + " prompt=" + prompt);
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(!jsonl(fs::path(r.out) / "metrics.jsonl").empty());
}

TEST_CASE("C API: NULL arguments and error reporting") {
  storm_config* c = nullptr;
  CHECK(storm_config_create(nullptr, &c) == STORM_ERR_ARGUMENT);
  CHECK(std::string(storm_last_error()).find("storm_config_create") != std::string::npos);
  CHECK(storm_config_create("synth", nullptr) == STORM_ERR_ARGUMENT);
  CHECK(storm_config_create("no-such-command", &c) == STORM_ERR_CONFIG);
  CHECK(c == nullptr);

  REQUIRE(storm_config_create("synth", &c) == STORM_OK);
  CHECK(storm_config_set(c, "seed", "5") == STORM_OK);
  CHECK(storm_config_assign(c, "n_volumes = 3") == STORM_OK);
  CHECK(storm_config_set(c, "missing", "1") == STORM_ERR_CONFIG);
  CHECK(storm_config_set(c, nullptr, "1") == STORM_ERR_ARGUMENT);
  char* v = nullptr;
  REQUIRE(storm_config_get(c, "n_volumes", &v) == STORM_OK);
  CHECK(std::string(v) == "3");
  storm_free_string(v);
  char* text = nullptr;
  REQUIRE(storm_config_to_text(c, &text) == STORM_OK);
  CHECK(std::string(text).find("seed = 5") != std::string::npos);
  storm_free_string(text);
  storm_config_free(c);

  storm_config_free(nullptr);
  storm_volume_free(nullptr);
  storm_encoder_free(nullptr);
  storm_free_string(nullptr);
  CHECK(std::string(storm_status_name(STORM_ERR_DIMENSION)) == "dimension");
  CHECK(storm_set_log_level(static_cast<storm_log_level>(9)) == STORM_ERR_ARGUMENT);
}

TEST_CASE("C API: volumes roundtrip and encoder features") {
  Scratch s("capi");
  const size_t dims[4] = {4, 8, 8, 8};
  storm_volume* v = nullptr;
  REQUIRE(storm_volume_synth(3, dims, 2, 0.1, &v) == STORM_OK);
  size_t got[4];
  REQUIRE(storm_volume_dims(v, got) == STORM_OK);
  CHECK(got[0] == 4);
  CHECK(got[3] == 8);
  const std::string path = (s.dir / "v.nii").string();
  REQUIRE(storm_volume_write_nifti(v, path.c_str()) == STORM_OK);
  storm_volume* w = nullptr;
  REQUIRE(storm_volume_read_nifti(path.c_str(), &w) == STORM_OK);
  double *a = nullptr, *b = nullptr;
  size_t na = 0, nb = 0;
  REQUIRE(storm_volume_data(v, &a, &na) == STORM_OK);
  REQUIRE(storm_volume_data(w, &b, &nb) == STORM_OK);
  REQUIRE(na == nb);
  CHECK(na == 4 * 8 * 8 * 8);
  bool same = true;
  for (size_t i = 0; i < na; ++i) same = same && static_cast<float>(a[i]) == b[i];
  CHECK(same);

  std::ofstream(s.dir / "junk.nii") << std::string(400, 'x');
  storm_volume* bad = nullptr;
  CHECK(storm_volume_read_nifti((s.dir / "junk.nii").string().c_str(), &bad) == STORM_ERR_FORMAT);
  CHECK(bad == nullptr);

  storm_encoder* e = nullptr;
  CHECK(storm_encoder_create("Huge", 1, &e) == STORM_ERR_CONFIG);
  REQUIRE(storm_encoder_create("Base", 1, &e) == STORM_OK);
  char* info = nullptr;
  REQUIRE(storm_encoder_info(e, &info) == STORM_OK);
  const json j = json::parse(info);
  storm_free_string(info);
  CHECK(j.at("params").get<std::size_t>() == 910368);
  const std::size_t d = j.at("feature_dim").get<std::size_t>();
  std::vector<float> f(d);
  size_t written = 0;
  CHECK(storm_encoder_features(e, v, f.data(), d - 1, &written) == STORM_ERR_LENGTH);
  CHECK(written == d);
  REQUIRE(storm_encoder_features(e, v, f.data(), d, &written) == STORM_OK);
  for (float x : f) CHECK(std::isfinite(x));

  const std::string ck = (s.dir / "e.ckpt").string();
  REQUIRE(storm_encoder_save(e, ck.c_str()) == STORM_OK);
  storm_encoder* e2 = nullptr;
  CHECK(storm_encoder_load(ck.c_str(), "Large", &e2) == STORM_ERR_CONFIG);
  REQUIRE(storm_encoder_load(ck.c_str(), nullptr, &e2) == STORM_OK);
  std::vector<float> f2(d);
  REQUIRE(storm_encoder_features(e2, v, f2.data(), d, &written) == STORM_OK);
  CHECK(f == f2);

  storm_encoder_free(e2);
  storm_encoder_free(e);
  storm_volume_free(w);
  storm_volume_free(v);
}

TEST_CASE("C API: retrieval on matched pairs") {
  const size_t n = 40, dim = 6;
  std::vector<double> x(n * dim);
  for (size_t i = 0; i < x.size(); ++i) x[i] = std::sin(1.7 * static_cast<double>(i) + 0.3);
  double rates[6];
  REQUIRE(storm_retrieval_eval(x.data(), x.data(), n, dim, 20, 5, 1, STORM_BRAIN_TO_IMAGE, rates) ==
          STORM_OK);
  CHECK(rates[0] == 1.0);
  CHECK(rates[3] == 0.0);
  CHECK(storm_retrieval_eval(x.data(), x.data(), n, dim, 50, 5, 1, STORM_BRAIN_TO_IMAGE, rates) != STORM_OK);
  CHECK(storm_retrieval_eval(nullptr, x.data(), n, dim, 20, 5, 1, STORM_BRAIN_TO_IMAGE, rates) ==
        STORM_ERR_ARGUMENT);
}
