#include "storm/pipeline/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "storm/core/log.hpp"
#include "storm/io/nifti.hpp"
#include "storm/io/preprocess.hpp"
#include "storm/io/synth.hpp"
#include "storm/model/checkpoint.hpp"
#include "storm/pretrain/mae.hpp"
#include "storm/prompt/prompt.hpp"

namespace storm::inline STORM_PREC_NS {

namespace fs = std::filesystem;
using nlohmann::json;

// ---- schema ------------------------------------------------------------

namespace {

using VT = ValueType;

std::vector<CommandSpec> build_specs() {
  const ConfigKey seed{"seed", VT::kInt, "0", "random seed, also recorded in the run directory name"};
  const ConfigKey data{"data", VT::kPath, "", "dataset directory (holds dataset.json)"};
  const ConfigKey ckpt{"checkpoint", VT::kPath, "", "encoder checkpoint"};
  const ConfigKey variant{"variant", VT::kString, "", "expected backbone variant; empty accepts the checkpoint's"};
  const ConfigKey prompt{"prompt", VT::kPath, "", "prompt checkpoint written by finetune"};
  const ConfigKey split{"split", VT::kString, "test", "test, val, train or all"};
  return {
      {"synth",
       "generate a synthetic low-rank fMRI dataset",
       {{"seed", VT::kInt, "7", "dataset seed; network maps are shared across volumes"},
        {"n_volumes", VT::kInt, "8", "number of volumes"},
        {"dims", VT::kIntList, "32,16,16,16", "frames,x,y,z"},
        {"n_networks", VT::kInt, "4", "latent networks per volume"},
        {"noise_sd", VT::kFloat, "0.1", "white noise sd"},
        {"amplitude", VT::kFloat, "1.0", "label-driven loading of the task network(s)"},
        {"spacing_mm", VT::kFloatList, "2,2,2", "voxel size"},
        {"tr", VT::kFloat, "0.8", "repetition time in seconds"},
        {"task", VT::kString, "gender-classification", "task kind the labels follow, or none"},
        {"name", VT::kString, "", "dataset id in reports; default synthetic-s<seed>"}}},
      {"preprocess",
       "resample, crop or pad and normalize a dataset",
       {seed,
        data,
        {"spacing_mm", VT::kFloatList, "2,2,2", "target voxel size"},
        {"tr", VT::kFloat, "0.8", "target repetition time"},
        {"grid", VT::kIntList, "16,16,16", "target x,y,z size"},
        {"normalize", VT::kString, "global", "global or voxel z-scoring"}}},
      {"pretrain",
       "masked-autoencoder pretraining with redundancy dropout",
       {seed,
        data,
        {"variant", VT::kString, "Base", "LowRes, LongSeq, Base or Large"},
        {"mask_ratio", VT::kFloat, "0.75", "fraction of tokens hidden"},
        {"strd", VT::kBool, "true", "spatiotemporal redundancy dropout"},
        {"epochs", VT::kInt, "1", "passes over the data (ignored when steps > 0)"},
        {"steps", VT::kInt, "0", "optimizer steps; 0 runs whole epochs"},
        {"batch_size", VT::kInt, "1", "volumes per step"},
        {"lr", VT::kFloat, "1e-3", "Adam learning rate"},
        {"weight_decay", VT::kFloat, "0", "L2 weight decay added to the gradient"},
        {"log_every", VT::kInt, "10", "progress line interval in steps"}}},
      {"finetune",
       "prompt tuning (or full fine-tuning) of a task head",
       {seed,
        data,
        ckpt,
        variant,
        {"task", VT::kString, "", "task kind; empty takes the dataset's"},
        {"split_seed", VT::kInt, "0", "seed of the 8:1:1 split"},
        {"scarcity", VT::kFloat, "1.0", "fraction of the training split used"},
        {"k", VT::kInt, "8", "prompt tokens"},
        {"steps", VT::kInt, "300", "optimizer steps"},
        {"batch_size", VT::kInt, "4", "samples per step"},
        {"lr", VT::kFloat, "3e-3", "Adam learning rate"},
        {"head_hidden", VT::kInt, "0", "hidden width of the head; 0 is linear"},
        {"full", VT::kBool, "false", "also train the backbone"},
        {"clip_frames", VT::kInt, "40", "clip length for state classification"},
        {"log_every", VT::kInt, "25", "progress line interval in steps"}}},
      {"eval",
       "score a tuned task head on a split",
       {seed, data, ckpt, variant, prompt, split}},
      {"retrieve",
       "top-m retrieval between predicted and paired embeddings",
       {seed,
        data,
        ckpt,
        variant,
        prompt,
        split,
        {"n_queries", VT::kInt, "300", "pairs per repeat"},
        {"repeats", VT::kInt, "30", "resampled pools"},
        {"direction", VT::kString, "both", "brain-to-image, image-to-brain or both"}}},
      {"report",
       "merge metric records and write a summary table",
       {seed, {"inputs", VT::kStringList, "", "metric files or run directories"}}},
  };
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

bool parse_int(const std::string& s, std::int64_t& v) {
  try {
    std::size_t pos = 0;
    v = std::stoll(s, &pos);
    return pos == s.size();
  } catch (...) {
    return false;
  }
}

bool parse_float(const std::string& s, double& v) {
  try {
    std::size_t pos = 0;
    v = std::stod(s, &pos);
    return pos == s.size() && std::isfinite(v);
  } catch (...) {
    return false;
  }
}

bool parse_bool(const std::string& s, bool& v) {
  if (s == "true" || s == "1" || s == "yes") return v = true, true;
  if (s == "false" || s == "0" || s == "no") return v = false, true;
  return false;
}

const char* type_name(VT t) {
  switch (t) {
    case VT::kString: return "string";
    case VT::kPath: return "path";
    case VT::kInt: return "integer";
    case VT::kFloat: return "number";
    case VT::kBool: return "boolean";
    case VT::kFloatList: return "comma-separated numbers";
    case VT::kIntList: return "comma-separated integers";
    case VT::kStringList: return "comma-separated list";
  }
  return "value";
}

bool valid_value(VT t, const std::string& v) {
  std::int64_t i;
  double d;
  bool b;
  switch (t) {
    case VT::kString:
    case VT::kPath:
    case VT::kStringList: return true;
    case VT::kInt: return parse_int(v, i);
    case VT::kFloat: return parse_float(v, d);
    case VT::kBool: return parse_bool(v, b);
    case VT::kFloatList:
      for (const auto& x : split_list(v))
        if (!parse_float(x, d)) return false;
      return true;
    case VT::kIntList:
      for (const auto& x : split_list(v))
        if (!parse_int(x, i)) return false;
      return true;
  }
  return false;
}

}  // namespace

const std::vector<CommandSpec>& command_specs() {
  static const std::vector<CommandSpec> specs = build_specs();
  return specs;
}

const CommandSpec& command_spec(const std::string& command) {
  for (const auto& s : command_specs())
    if (s.name == command) return s;
  fail(ErrorKind::kConfig, "unknown command '", command, "'");
}

std::pair<std::string, std::string> parse_assignment(std::string_view text) {
  const auto eq = text.find('=');
  STORM_CHECK(eq != std::string_view::npos, ErrorKind::kConfig, "expected key=value, got '",
              std::string(text), "'");
  std::string k = trim(text.substr(0, eq));
  STORM_CHECK(!k.empty(), ErrorKind::kConfig, "empty key in '", std::string(text), "'");
  return {std::move(k), trim(text.substr(eq + 1))};
}

RunConfig::RunConfig(const std::string& command) : spec_(&command_spec(command)) {
  for (const auto& k : spec_->keys) values_.push_back(k.default_value);
}

const ConfigKey& RunConfig::key(const std::string& name) const {
  for (const auto& k : spec_->keys)
    if (k.name == name) return k;
  std::string known;
  for (const auto& k : spec_->keys) known += (known.empty() ? "" : ", ") + k.name;
  fail(ErrorKind::kConfig, "unknown key '", name, "' for ", spec_->name, " (known: ", known, ")");
}

void RunConfig::set(const std::string& name, const std::string& value) {
  const ConfigKey& k = key(name);
  STORM_CHECK(valid_value(k.type, value), ErrorKind::kConfig, "key '", name, "' expects ",
              type_name(k.type), ", got '", value, "'");
  values_[static_cast<std::size_t>(&k - spec_->keys.data())] = value;
}

void RunConfig::load_text(std::string_view text, const std::string& origin) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    const std::string body = trim(hash == std::string::npos ? line : line.substr(0, hash));
    if (body.empty()) continue;
    try {
      const auto [k, v] = parse_assignment(body);
      set(k, v);
    } catch (const Error& e) {
      fail(e.kind(), origin, ":", lineno, ": ", e.what());
    }
  }
}

void RunConfig::load_file(const fs::path& path) {
  std::ifstream in(path);
  STORM_CHECK(in.good(), ErrorKind::kData, "cannot open config file ", path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  load_text(ss.str(), path.string());
}

const std::string& RunConfig::get(const std::string& name) const {
  return values_[static_cast<std::size_t>(&key(name) - spec_->keys.data())];
}

std::int64_t RunConfig::get_int(const std::string& name) const {
  std::int64_t v = 0;
  parse_int(get(name), v);
  return v;
}

std::size_t RunConfig::get_size(const std::string& name) const {
  const std::int64_t v = get_int(name);
  STORM_CHECK(v >= 0, ErrorKind::kConfig, "key '", name, "' must be >= 0, got ", v);
  return static_cast<std::size_t>(v);
}

double RunConfig::get_float(const std::string& name) const {
  double v = 0;
  parse_float(get(name), v);
  return v;
}

bool RunConfig::get_bool(const std::string& name) const {
  bool v = false;
  parse_bool(get(name), v);
  return v;
}

std::vector<double> RunConfig::get_floats(const std::string& name) const {
  std::vector<double> out;
  for (const auto& s : split_list(get(name))) {
    double v = 0;
    parse_float(s, v);
    out.push_back(v);
  }
  return out;
}

std::vector<std::size_t> RunConfig::get_sizes(const std::string& name) const {
  std::vector<std::size_t> out;
  for (const auto& s : split_list(get(name))) {
    std::int64_t v = 0;
    parse_int(s, v);
    STORM_CHECK(v >= 0, ErrorKind::kConfig, "key '", name, "' entries must be >= 0");
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

std::vector<std::string> RunConfig::get_strings(const std::string& name) const {
  return split_list(get(name));
}

fs::path RunConfig::get_path(const std::string& name) const {
  const std::string& v = get(name);
  STORM_CHECK(!v.empty(), ErrorKind::kConfig, spec_->name, " needs '", name, "' (", key(name).help, ")");
  return fs::path(v);
}

std::string RunConfig::to_text() const {
  std::ostringstream os;
  os << "# storm " << spec_->name << " resolved configuration\n";
  for (std::size_t i = 0; i < spec_->keys.size(); ++i)
    os << spec_->keys[i].name << " = " << values_[i] << '\n';
  return os.str();
}

json RunConfig::to_json() const {
  json j = json::object();
  for (std::size_t i = 0; i < spec_->keys.size(); ++i) j[spec_->keys[i].name] = values_[i];
  return j;
}

fs::path make_run_dir(const fs::path& root, const std::string& command, std::uint64_t seed) {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream name;
  name << std::put_time(&tm, "%Y%m%dT%H%M%SZ") << '-' << command << "-seed" << seed;
  std::error_code ec;
  fs::create_directories(root, ec);
  STORM_CHECK(!ec, ErrorKind::kData, "cannot create run root ", root.string(), ": ", ec.message());
  for (int n = 0; n < 1000; ++n) {
    const fs::path p = root / (n == 0 ? name.str() : name.str() + "-" + std::to_string(n));
    if (fs::create_directory(p, ec)) return p;
    STORM_CHECK(!ec, ErrorKind::kData, "cannot create run directory ", p.string(), ": ", ec.message());
  }
  fail(ErrorKind::kData, "too many run directories named ", name.str(), " under ", root.string());
}

// ---- datasets ----------------------------------------------------------

Dataset read_dataset(const fs::path& dir) {
  const fs::path manifest = dir / "dataset.json";
  std::ifstream in(manifest);
  STORM_CHECK(in.good(), ErrorKind::kData, "missing dataset manifest ", manifest.string());
  Dataset d;
  d.root = dir;
  try {
    const json j = json::parse(in);
    STORM_CHECK(j.value("kind", "") == "dataset", ErrorKind::kFormat, manifest.string(),
                " is not a dataset manifest");
    d.name = j.at("name").get<std::string>();
    d.task = j.value("task", "none");
    d.files = j.at("files").get<std::vector<std::string>>();
    if (j.contains("labels")) d.labels = j.at("labels").get<std::vector<std::string>>();
    if (j.contains("targets")) d.targets = j.at("targets").get<std::vector<std::vector<double>>>();
  } catch (const json::exception& e) {
    fail(ErrorKind::kFormat, manifest.string(), ": ", e.what());
  }
  STORM_CHECK(d.labels.empty() || d.labels.size() == d.size(), ErrorKind::kData, manifest.string(),
              ": ", d.labels.size(), " labels for ", d.size(), " volumes");
  STORM_CHECK(d.targets.empty() || d.targets.size() == d.size(), ErrorKind::kData, manifest.string(),
              ": ", d.targets.size(), " targets for ", d.size(), " volumes");
  return d;
}

void write_dataset_manifest(const Dataset& d) {
  json j{{"kind", "dataset"}, {"name", d.name}, {"task", d.task}, {"files", d.files}};
  if (!d.labels.empty()) j["labels"] = d.labels;
  if (!d.targets.empty()) j["targets"] = d.targets;
  std::ofstream out(d.root / "dataset.json");
  STORM_CHECK(out.good(), ErrorKind::kData, "cannot write ", (d.root / "dataset.json").string());
  out << j.dump(1) << '\n';
}

std::vector<Volume4D> load_dataset_volumes(const Dataset& d) {
  std::vector<Volume4D> out;
  out.reserve(d.size());
  for (const auto& f : d.files) {
    const fs::path p = d.root / f;
    STORM_CHECK(fs::exists(p), ErrorKind::kData, "missing volume file ", p.string());
    out.push_back(read_nifti1(p));
  }
  return out;
}

std::vector<Tensor> load_dataset_tensors(const Dataset& d) {
  std::vector<Tensor> out;
  for (const auto& v : load_dataset_volumes(d)) out.push_back(volume_tensor(v));
  return out;
}

// ---- encoder checkpoints -----------------------------------------------

namespace {
json grid_json(const Grid4& g) { return json::array({g.t, g.x, g.y, g.z}); }
Grid4 grid_from(const json& j) {
  const auto v = j.get<std::vector<std::size_t>>();
  STORM_CHECK(v.size() == 4, ErrorKind::kFormat, "grid needs 4 entries (t,x,y,z)");
  return {v[0], v[1], v[2], v[3]};
}
}  // namespace

json to_json(const EncoderConfig& c) {
  return {{"variant", c.variant},     {"patch", grid_json(c.patch)},   {"embed_dim", c.embed_dim},
          {"depths", c.depths},       {"window", grid_json(c.window)}, {"d_state", c.d_state},
          {"mlp_ratio", c.mlp_ratio}, {"head_dim", c.head_dim},        {"attention_stages", c.attention_stages},
          {"seed", c.seed}};
}

EncoderConfig encoder_config_from_json(const json& j) {
  EncoderConfig c;
  try {
    c.variant = j.at("variant").get<std::string>();
    c.patch = grid_from(j.at("patch"));
    c.embed_dim = j.at("embed_dim").get<std::size_t>();
    c.depths = j.at("depths").get<std::vector<std::size_t>>();
    c.window = grid_from(j.at("window"));
    c.d_state = j.at("d_state").get<std::size_t>();
    c.mlp_ratio = j.at("mlp_ratio").get<std::size_t>();
    c.head_dim = j.at("head_dim").get<std::size_t>();
    c.attention_stages = j.at("attention_stages").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    fail(ErrorKind::kFormat, "encoder config: ", e.what());
  }
  c.validate();
  return c;
}

void save_encoder(const fs::path& path, const Encoder& encoder, const json& extra) {
  json m = extra.is_object() ? extra : json::object();
  m["kind"] = "encoder";
  m["variant"] = encoder.config().variant;
  m["encoder"] = to_json(encoder.config());
  save_checkpoint(path, m, encoder.params());
}

std::unique_ptr<Encoder> load_encoder(const fs::path& path, const std::string& variant) {
  STORM_CHECK(fs::exists(path), ErrorKind::kData, "missing checkpoint ", path.string());
  const Checkpoint ck = read_checkpoint(path);
  STORM_CHECK(ck.manifest.value("kind", "") == "encoder", ErrorKind::kFormat, path.string(),
              " is not an encoder checkpoint");
  const EncoderConfig stored = encoder_config_from_json(ck.manifest.at("encoder"));
  if (!variant.empty() && variant != stored.variant) {
    EncoderConfig want = variant_config(variant);
    const Encoder probe(want);
    std::string detail;
    try {
      load_params(ck, probe.params());
    } catch (const Error& e) {
      detail = std::string(": ") + e.what();
    }
    fail(ErrorKind::kConfig, path.string(), " holds variant ", stored.variant, ", expected ", variant,
         detail);
  }
  auto enc = std::make_unique<Encoder>(stored);
  load_params(ck, enc->params());
  return enc;
}

// ---- commands ----------------------------------------------------------

namespace {

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream out(p);
  STORM_CHECK(out.good(), ErrorKind::kData, "cannot write ", p.string());
  out << s;
}

class JsonlWriter {
 public:
  explicit JsonlWriter(const fs::path& p) : out_(p) {
    STORM_CHECK(out_.good(), ErrorKind::kData, "cannot write ", p.string());
  }
  void write(const json& j) { out_ << j.dump() << '\n'; }

 private:
  std::ofstream out_;
};

std::array<double, 3> triple(const std::vector<double>& v, const char* key) {
  STORM_CHECK(v.size() == 3, ErrorKind::kConfig, "key '", key, "' needs 3 values, got ", v.size());
  return {v[0], v[1], v[2]};
}

NiftiWriteOptions nifti_options() { return {}; }

json cmd_synth(const RunConfig& c, const fs::path& dir) {
  const auto dims = c.get_sizes("dims");
  STORM_CHECK(dims.size() == 4, ErrorKind::kConfig, "dims needs frames,x,y,z");
  const std::size_t n = c.get_size("n_volumes");
  STORM_CHECK(n >= 1, ErrorKind::kConfig, "n_volumes must be >= 1");
  const auto seed = static_cast<std::uint64_t>(c.get_int("seed"));
  const std::string task = c.get("task");
  const bool labelled = task != "none";
  const TaskFamily family = labelled ? task_family(parse_task_kind(task)) : TaskFamily::kClassification;
  const std::size_t K = c.get_size("n_networks");
  STORM_CHECK(K >= 1, ErrorKind::kConfig, "n_networks must be >= 1");
  const double amp = c.get_float("amplitude");

  Dataset d;
  d.root = dir / "data";
  fs::create_directories(d.root / "volumes");
  d.name = c.get("name").empty() ? "synthetic-s" + std::to_string(seed) : c.get("name");
  d.task = task;
  const Rng root(seed, 0x53594e);
  for (std::size_t i = 0; i < n; ++i) {
    SynthConfig sc;
    sc.seed = root.split(i).next_u64();
    sc.map_seed = seed;
    sc.dims = {dims[0], dims[1], dims[2], dims[3]};
    sc.n_latent_networks = K;
    sc.noise_sd = c.get_float("noise_sd");
    sc.spacing_mm = triple(c.get_floats("spacing_mm"), "spacing_mm");
    sc.tr_seconds = c.get_float("tr");
    Rng lab = root.split(i).split(0x4c4142);
    if (labelled) {
      switch (family) {
        case TaskFamily::kClassification:
          // Alternating classes; the sign of network 0's loading separates them.
          sc.amplitudes = {i % 2 ? amp : -amp};
          d.labels.push_back(i % 2 ? "positive" : "negative");
          break;
        case TaskFamily::kRegression: {
          const double u = lab.uniform(-1.0, 1.0);
          sc.amplitudes = {amp * u};
          d.targets.push_back({50.0 + 20.0 * u});
          break;
        }
        case TaskFamily::kRetrieval: {
          std::vector<double> e(K);
          for (auto& v : e) v = lab.normal();
          for (double v : e) sc.amplitudes.push_back(amp * v);
          d.targets.push_back(e);
          break;
        }
      }
    }
    std::ostringstream f;
    f << "volumes/vol_" << std::setw(4) << std::setfill('0') << i << ".nii";
    write_nifti1(d.root / f.str(), synth_fmri(sc).volume, nifti_options());
    d.files.push_back(f.str());
  }
  write_dataset_manifest(d);
  log(LogLevel::kInfo, "synth: wrote ", n, " volumes to ", d.root.string());
  return {{"dataset", d.root.string()}, {"n_volumes", n}, {"name", d.name}, {"task", d.task}};
}

json cmd_preprocess(const RunConfig& c, const fs::path& dir) {
  const Dataset in = read_dataset(c.get_path("data"));
  PreprocessConfig pc;
  pc.spacing_mm = triple(c.get_floats("spacing_mm"), "spacing_mm");
  pc.tr_seconds = c.get_float("tr");
  const auto g = c.get_sizes("grid");
  STORM_CHECK(g.size() == 3, ErrorKind::kConfig, "grid needs x,y,z");
  pc.grid = {g[0], g[1], g[2]};
  const std::string norm = c.get("normalize");
  STORM_CHECK(norm == "global" || norm == "voxel", ErrorKind::kConfig,
              "normalize must be global or voxel, got '", norm, "'");
  pc.normalize = norm == "global" ? NormalizeMode::kGlobalZscore : NormalizeMode::kPerVoxelZscore;

  Dataset out = in;
  out.root = dir / "data";
  fs::create_directories(out.root / "volumes");
  JsonlWriter stats(dir / "stats.jsonl");
  for (std::size_t i = 0; i < in.size(); ++i) {
    const fs::path src = in.root / in.files[i];
    STORM_CHECK(fs::exists(src), ErrorKind::kData, "missing volume file ", src.string());
    const NormalizedVolume nv = preprocess(read_nifti1(src), pc);
    write_nifti1(out.root / in.files[i], nv.volume, nifti_options());
    stats.write({{"file", in.files[i]}, {"mean", nv.stats.mean}, {"sd", nv.stats.sd}});
  }
  write_dataset_manifest(out);
  log(LogLevel::kInfo, "preprocess: ", in.size(), " volumes -> ", out.root.string());
  return {{"dataset", out.root.string()}, {"n_volumes", in.size()}};
}

json cmd_pretrain(const RunConfig& c, const fs::path& dir) {
  const Dataset d = read_dataset(c.get_path("data"));
  const auto volumes = load_dataset_tensors(d);
  PretrainConfig pc;
  pc.encoder = variant_config(c.get("variant"));
  pc.mae.mask_ratio = c.get_float("mask_ratio");
  pc.mae.strd = c.get_bool("strd");
  pc.adam.lr = c.get_float("lr");
  pc.adam.weight_decay = c.get_float("weight_decay");
  pc.batch_size = c.get_size("batch_size");
  STORM_CHECK(pc.batch_size >= 1, ErrorKind::kConfig, "batch_size must be >= 1");
  pc.seed = static_cast<std::uint64_t>(c.get_int("seed"));
  const std::size_t steps = c.get_size("steps");
  if (steps > 0) {
    const std::size_t per_epoch = (volumes.size() + pc.batch_size - 1) / pc.batch_size;
    pc.max_steps = steps;
    pc.epochs = (steps + per_epoch - 1) / per_epoch;
  } else {
    pc.epochs = c.get_size("epochs");
  }
  const std::size_t every = std::max<std::size_t>(1, c.get_size("log_every"));

  JsonlWriter curve(dir / "loss.jsonl");
  const auto t0 = std::chrono::steady_clock::now();
  const PretrainResult r = pretrain(pc, volumes, [&](const PretrainRecord& rec) {
    curve.write({{"step", rec.step},
                 {"epoch", rec.epoch},
                 {"loss", rec.loss},
                 {"drop_rate", rec.drop_rate},
                 {"mean_weight", rec.mean_weight},
                 {"omega_mass", rec.omega_mass}});
    if (rec.step % every == 0 || rec.step == 1)
      log(LogLevel::kInfo, "pretrain step ", rec.step, " loss ", rec.loss, " drop ", rec.drop_rate, " (",
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(), " s)");
  });
  STORM_CHECK(!r.curve.empty(), ErrorKind::kTraining, "pretraining ran zero steps");
  const Encoder& enc = r.model->encoder();
  save_encoder(dir / "encoder.ckpt", enc, {{"dataset", d.name}, {"pretrain", c.to_json()}});
  return {{"checkpoint", (dir / "encoder.ckpt").string()},
          {"steps", r.curve.size()},
          {"first_loss", r.curve.front().loss},
          {"final_loss", r.curve.back().loss},
          {"params", enc.param_count()},
          {"backbone_hash", hex64(params_hash(enc.params()))}};
}

std::string resolve_task(const RunConfig& c, const Dataset& d) {
  std::string task = c.get("task");
  if (task.empty()) task = d.task;
  STORM_CHECK(task != "none" && !task.empty(), ErrorKind::kConfig, "dataset ", d.name,
              " has no task; set task=<kind>");
  parse_task_kind(task);
  return task;
}

std::vector<std::size_t> pick_split(const SplitPlan& p, const std::string& which, std::size_t n) {
  if (which == "test") return p.test;
  if (which == "val") return p.val;
  if (which == "train") return p.train;
  if (which == "all") {
    std::vector<std::size_t> all(n);
    for (std::size_t i = 0; i < n; ++i) all[i] = i;
    return all;
  }
  fail(ErrorKind::kConfig, "split must be test, val, train or all, got '", which, "'");
}

// Encoded sample for one dataset item; clips are applied by the caller.
Sample make_sample(const Dataset& d, const Tensor& vol, std::size_t i, TaskFamily family,
                   const LabelCodec* codec) {
  Sample s;
  s.volume = vol;
  switch (family) {
    case TaskFamily::kClassification:
      STORM_CHECK(!d.labels.empty(), ErrorKind::kData, "dataset ", d.name, " has no class labels");
      s.label = codec->class_index(d.labels[i]);
      break;
    case TaskFamily::kRegression:
      STORM_CHECK(!d.targets.empty(), ErrorKind::kData, "dataset ", d.name, " has no regression targets");
      s.target = codec->encode_target(d.targets[i]);
      break;
    case TaskFamily::kRetrieval:
      STORM_CHECK(!d.targets.empty(), ErrorKind::kData, "dataset ", d.name, " has no paired embeddings");
      s.target = d.targets[i];
      break;
  }
  return s;
}

json cmd_finetune(const RunConfig& c, const fs::path& dir) {
  const Dataset d = read_dataset(c.get_path("data"));
  auto enc = load_encoder(c.get_path("checkpoint"), c.get("variant"));
  const std::string task = resolve_task(c, d);
  const TaskKind kind = parse_task_kind(task);
  const TaskFamily family = task_family(kind);
  const auto split_seed = static_cast<std::uint64_t>(c.get_int("split_seed"));
  const double scarcity = c.get_float("scarcity");
  const SplitPlan split = make_split(d.size(), split_seed, scarcity);

  LabelCodec codec;
  json codec_json = nullptr;
  if (family == TaskFamily::kClassification) {
    codec = LabelCodec::fit_classes(d.labels);
  } else if (family == TaskFamily::kRegression) {
    STORM_CHECK(!d.targets.empty(), ErrorKind::kData, "dataset ", d.name, " has no regression targets");
    std::vector<std::vector<double>> tr;
    for (auto i : split.train) tr.push_back(d.targets[i]);
    codec = LabelCodec::fit_targets(tr);
  }
  if (family != TaskFamily::kRetrieval) codec_json = codec.to_json();

  const auto volumes = load_dataset_tensors(d);
  std::vector<Sample> train;
  for (auto i : split.train) train.push_back(make_sample(d, volumes[i], i, family, &codec));

  TuneConfig tc;
  tc.k = c.get_size("k");
  tc.steps = c.get_size("steps");
  tc.batch_size = c.get_size("batch_size");
  tc.adam.lr = c.get_float("lr");
  tc.seed = static_cast<std::uint64_t>(c.get_int("seed"));
  tc.head.hidden = c.get_size("head_hidden");
  switch (family) {
    case TaskFamily::kClassification:
      tc.head.kind = HeadKind::kClassification;
      tc.head.out_dim = codec.n_outputs();
      break;
    case TaskFamily::kRegression:
      tc.head.kind = HeadKind::kRegression;
      tc.head.out_dim = codec.n_outputs();
      break;
    case TaskFamily::kRetrieval:
      tc.head.kind = HeadKind::kEmbedding;
      tc.head.out_dim = train.front().target.size();
      break;
  }
  const std::size_t clip = c.get_size("clip_frames");
  if (kind == TaskKind::kStateClassification)
    tc.view = [clip](const Sample& s, Rng& rng) {
      return frame_window_extract(s.volume, clip, ClipMode::kRandomTrain, &rng);
    };
  const std::size_t every = std::max<std::size_t>(1, c.get_size("log_every"));
  JsonlWriter curve(dir / "tune.jsonl");
  auto on_step = [&](const TuneRecord& r) {
    curve.write({{"step", r.step}, {"loss", r.loss}});
    if (r.step % every == 0 || r.step == 1) log(LogLevel::kInfo, "finetune step ", r.step, " loss ", r.loss);
  };
  const bool full = c.get_bool("full");
  const TuneResult res = full ? full_finetune(*enc, train, tc, on_step) : finetune(*enc, train, tc, on_step);

  json meta{{"task", task},
            {"dataset", d.name},
            {"n_samples", d.size()},
            {"split_seed", split_seed},
            {"scarcity", scarcity},
            {"seed", tc.seed},
            {"clip_frames", clip},
            {"codec", codec_json},
            {"full", full}};
  json summary{{"prompt", (dir / "prompt.ckpt").string()},
               {"task", task},
               {"train_samples", train.size()},
               {"steps", res.curve.size()},
               {"trainable", res.trainable},
               {"total", res.total},
               {"trainable_fraction", res.trainable_fraction},
               {"backbone_hash_before", hex64(res.backbone_hash_before)},
               {"backbone_hash_after", hex64(res.backbone_hash_after)}};
  if (!res.curve.empty()) summary["final_loss"] = res.curve.back().loss;
  if (full) {
    save_encoder(dir / "encoder.ckpt", *enc, {{"dataset", d.name}, {"finetune", c.to_json()}});
    summary["checkpoint"] = (dir / "encoder.ckpt").string();
  }
  save_prompt_state(dir / "prompt.ckpt", res.state, *enc, meta);
  return summary;
}

struct Tuned {
  Dataset data;
  std::unique_ptr<Encoder> encoder;
  PromptState state;
  json meta;
  TaskKind kind{};
  std::vector<std::size_t> rows;
  std::vector<Sample> samples;
  LabelCodec codec;
};

Tuned load_tuned(const RunConfig& c) {
  Tuned t;
  t.data = read_dataset(c.get_path("data"));
  t.encoder = load_encoder(c.get_path("checkpoint"), c.get("variant"));
  const fs::path pp = c.get_path("prompt");
  STORM_CHECK(fs::exists(pp), ErrorKind::kData, "missing prompt checkpoint ", pp.string());
  t.state = load_prompt_state(pp, *t.encoder);
  t.meta = read_checkpoint(pp).manifest;
  t.kind = parse_task_kind(t.meta.at("task").get<std::string>());
  const std::size_t n = t.meta.at("n_samples").get<std::size_t>();
  STORM_CHECK(n == t.data.size(), ErrorKind::kConfig, "prompt was tuned on ", n, " samples, dataset ",
              t.data.name, " has ", t.data.size());
  const SplitPlan split = make_split(n, t.meta.at("split_seed").get<std::uint64_t>());
  t.rows = pick_split(split, c.get("split"), n);
  const TaskFamily family = task_family(t.kind);
  if (!t.meta.at("codec").is_null()) t.codec = LabelCodec::from_json(t.meta.at("codec"));
  const auto volumes = load_dataset_tensors(t.data);
  const std::size_t clip = t.meta.at("clip_frames").get<std::size_t>();
  for (auto i : t.rows) {
    Sample s = make_sample(t.data, volumes[i], i, family, &t.codec);
    if (t.kind == TaskKind::kStateClassification)
      s.volume = frame_window_extract(s.volume, clip, ClipMode::kFirstEval, nullptr);
    t.samples.push_back(std::move(s));
  }
  STORM_CHECK(!t.samples.empty(), ErrorKind::kData, "split '", c.get("split"), "' is empty");
  return t;
}

json cmd_eval(const RunConfig& c, const fs::path& dir) {
  const Tuned t = load_tuned(c);
  const auto out = predict(*t.encoder, t.state, t.samples);
  const TaskFamily family = task_family(t.kind);
  MetricRecord m;
  JsonlWriter preds(dir / "predictions.jsonl");
  if (family == TaskFamily::kClassification) {
    std::vector<std::size_t> labels;
    for (std::size_t i = 0; i < out.size(); ++i) {
      labels.push_back(t.samples[i].label);
      const auto arg = static_cast<std::size_t>(std::max_element(out[i].begin(), out[i].end()) - out[i].begin());
      preds.write({{"index", t.rows[i]}, {"scores", out[i]}, {"predicted", t.codec.decode_class(arg)},
                   {"label", t.data.labels[t.rows[i]]}});
    }
    m = classification_metrics(out, labels);
  } else if (family == TaskFamily::kRegression) {
    std::vector<std::vector<double>> pred, truth;
    for (std::size_t i = 0; i < out.size(); ++i) {
      pred.push_back(t.codec.decode_target(out[i]));
      truth.push_back(t.data.targets[t.rows[i]]);
      preds.write({{"index", t.rows[i]}, {"predicted", pred.back()}, {"target", truth.back()}});
    }
    m = regression_metrics(pred, truth);
  } else {
    double cos = 0;
    for (std::size_t i = 0; i < out.size(); ++i) {
      const auto& a = out[i];
      const auto& b = t.samples[i].target;
      double ab = 0, aa = 0, bb = 0;
      for (std::size_t j = 0; j < a.size(); ++j) ab += a[j] * b[j], aa += a[j] * a[j], bb += b[j] * b[j];
      cos += aa > 0 && bb > 0 ? ab / std::sqrt(aa * bb) : 0.0;
      preds.write({{"index", t.rows[i]}, {"embedding", a}});
    }
    m.values["cosine"] = cos / static_cast<double>(out.size());
  }
  std::vector<BenchmarkRecord> recs;
  for (const auto& [name, value] : m.values)
    recs.push_back({t.meta.at("task").get<std::string>(), t.data.name, t.meta.at("scarcity").get<double>(),
                    t.meta.at("seed").get<std::uint64_t>(), name, value});
  write_jsonl(dir / "metrics.jsonl", recs);
  json summary{{"metrics", m.values}, {"flags", m.flags}, {"n_samples", t.samples.size()},
               {"records_hash", hex64(records_hash(recs))}};
  for (const auto& f : m.flags) log(LogLevel::kWarn, "eval: ", f);
  return summary;
}

json cmd_retrieve(const RunConfig& c, const fs::path& dir) {
  const Tuned t = load_tuned(c);
  STORM_CHECK(t.state.head.spec.kind == HeadKind::kEmbedding, ErrorKind::kConfig,
              "retrieve needs a prompt tuned with an embedding head (task retrieval)");
  const auto out = predict(*t.encoder, t.state, t.samples);
  const std::size_t dim = out.front().size();
  Embeddings brain{out.size(), dim, {}}, image{out.size(), dim, {}};
  for (std::size_t i = 0; i < out.size(); ++i) {
    brain.values.insert(brain.values.end(), out[i].begin(), out[i].end());
    image.values.insert(image.values.end(), t.samples[i].target.begin(), t.samples[i].target.end());
  }
  RetrievalConfig rc;
  rc.n_queries = c.get_size("n_queries");
  rc.repeats = c.get_size("repeats");
  rc.seed = static_cast<std::uint64_t>(c.get_int("seed"));
  STORM_CHECK(rc.n_queries <= out.size(), ErrorKind::kConfig, "n_queries ", rc.n_queries, " exceeds the ",
              out.size(), " pairs in split '", c.get("split"), "'");
  std::vector<RetrievalDirection> dirs;
  const std::string d = c.get("direction");
  if (d == "both" || d == "brain-to-image") dirs.push_back(RetrievalDirection::kBrainToImage);
  if (d == "both" || d == "image-to-brain") dirs.push_back(RetrievalDirection::kImageToBrain);
  STORM_CHECK(!dirs.empty(), ErrorKind::kConfig, "direction must be brain-to-image, image-to-brain or both");
  std::vector<BenchmarkRecord> recs;
  json summary = json::object();
  for (auto dr : dirs) {
    rc.direction = dr;
    const RetrievalReport r = retrieval_eval(brain, image, rc);
    const std::string tag = retrieval_direction_name(dr);
    const std::pair<const char*, double> vals[] = {{"top1", r.top1},       {"top3", r.top3},
                                                   {"top5", r.top5},       {"top1_sd", r.top1_sd},
                                                   {"top3_sd", r.top3_sd}, {"top5_sd", r.top5_sd}};
    for (const auto& [name, v] : vals) {
      recs.push_back({t.meta.at("task").get<std::string>(), t.data.name, t.meta.at("scarcity").get<double>(),
                      t.meta.at("seed").get<std::uint64_t>(), tag + "/" + name, v});
      summary[tag][name] = v;
    }
  }
  write_jsonl(dir / "metrics.jsonl", recs);
  summary["records_hash"] = hex64(records_hash(recs));
  return summary;
}

json cmd_report(const RunConfig& c, const fs::path& dir) {
  const auto inputs = c.get_strings("inputs");
  STORM_CHECK(!inputs.empty(), ErrorKind::kConfig, "report needs 'inputs' (metric files or run directories)");
  std::vector<BenchmarkRecord> all;
  for (const auto& in : inputs) {
    fs::path p(in);
    if (fs::is_directory(p)) p /= "metrics.jsonl";
    STORM_CHECK(fs::exists(p), ErrorKind::kData, "missing metric file ", p.string());
    const auto recs = read_jsonl(p);
    all.insert(all.end(), recs.begin(), recs.end());
  }
  write_jsonl(dir / "records.jsonl", all);
  write_summary_csv(dir / "summary.csv", all);
  return {{"records", all.size()}, {"records_hash", hex64(records_hash(all))},
          {"summary", (dir / "summary.csv").string()}};
}

}  // namespace

json run_command(const RunConfig& config, const fs::path& run_dir) {
  fs::create_directories(run_dir);
  write_text(run_dir / "config.txt", config.to_text());
  const std::string& cmd = config.command();
  json summary;
  if (cmd == "synth") summary = cmd_synth(config, run_dir);
  else if (cmd == "preprocess") summary = cmd_preprocess(config, run_dir);
  else if (cmd == "pretrain") summary = cmd_pretrain(config, run_dir);
  else if (cmd == "finetune") summary = cmd_finetune(config, run_dir);
  else if (cmd == "eval") summary = cmd_eval(config, run_dir);
  else if (cmd == "retrieve") summary = cmd_retrieve(config, run_dir);
  else if (cmd == "report") summary = cmd_report(config, run_dir);
  else fail(ErrorKind::kInternal, "no handler for command ", cmd);
  summary["command"] = cmd;
  summary["run_dir"] = run_dir.string();
  write_text(run_dir / "summary.json", summary.dump(1) + "\n");
  return summary;
}

}  // namespace storm::inline STORM_PREC_NS
