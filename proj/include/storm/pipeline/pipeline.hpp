#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "storm/harness/harness.hpp"
#include "storm/model/encoder.hpp"

namespace storm::inline STORM_PREC_NS {

// ---- run configuration -------------------------------------------------

enum class ValueType { kString, kPath, kInt, kFloat, kBool, kFloatList, kIntList, kStringList };

struct ConfigKey {
  std::string name;
  ValueType type = ValueType::kString;
  std::string default_value;
  std::string help;
};

struct CommandSpec {
  std::string name;
  std::string help;
  std::vector<ConfigKey> keys;
};

// synth, preprocess, pretrain, finetune, eval, retrieve, report.
const std::vector<CommandSpec>& command_specs();
const CommandSpec& command_spec(const std::string& command);

// "key=value" -> {key, value}; surrounding whitespace is trimmed.
std::pair<std::string, std::string> parse_assignment(std::string_view text);

// Key-value settings for one command, starting from the schema defaults.
// Unknown keys and values that do not parse as the key's type are config
// errors.
class RunConfig {
 public:
  explicit RunConfig(const std::string& command);

  const std::string& command() const { return spec_->name; }
  const CommandSpec& spec() const { return *spec_; }

  void set(const std::string& key, const std::string& value);
  // One `key = value` per line; `#` starts a comment. `origin` names the
  // source in error messages.
  void load_text(std::string_view text, const std::string& origin);
  void load_file(const std::filesystem::path& path);

  const std::string& get(const std::string& key) const;
  std::int64_t get_int(const std::string& key) const;
  std::size_t get_size(const std::string& key) const;
  double get_float(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<double> get_floats(const std::string& key) const;
  std::vector<std::size_t> get_sizes(const std::string& key) const;
  std::vector<std::string> get_strings(const std::string& key) const;
  std::filesystem::path get_path(const std::string& key) const;

  // Every key in schema order, so the text reloads to the same config.
  std::string to_text() const;
  nlohmann::json to_json() const;

 private:
  const ConfigKey& key(const std::string& name) const;
  const CommandSpec* spec_;
  std::vector<std::string> values_;
};

// <root>/<UTC yyyymmddTHHMMSSZ>-<command>-seed<seed>, with a numeric suffix
// when that directory already exists.
std::filesystem::path make_run_dir(const std::filesystem::path& root, const std::string& command,
                                   std::uint64_t seed);

// ---- datasets ----------------------------------------------------------

// A directory holding dataset.json and one NIfTI file per volume. Labels
// are strings for classification; targets are per-volume vectors for
// regression (original scale) and retrieval (paired embeddings).
struct Dataset {
  std::filesystem::path root;
  std::string name;
  std::string task = "none";
  std::vector<std::string> files;  // relative to root
  std::vector<std::string> labels;
  std::vector<std::vector<double>> targets;

  std::size_t size() const { return files.size(); }
};

Dataset read_dataset(const std::filesystem::path& dir);
void write_dataset_manifest(const Dataset& d);
std::vector<Volume4D> load_dataset_volumes(const Dataset& d);
std::vector<Tensor> load_dataset_tensors(const Dataset& d);

// ---- encoder checkpoints -----------------------------------------------

nlohmann::json to_json(const EncoderConfig& c);
EncoderConfig encoder_config_from_json(const nlohmann::json& j);

void save_encoder(const std::filesystem::path& path, const Encoder& encoder,
                  const nlohmann::json& extra = {});
// When `variant` is non-empty the checkpoint must hold that variant; a
// mismatch is a config error that lists the differing parameter shapes.
std::unique_ptr<Encoder> load_encoder(const std::filesystem::path& path,
                                      const std::string& variant = {});

// ---- commands ----------------------------------------------------------

// Runs one command, writing its outputs (and config.txt, summary.json)
// into run_dir. Returns the summary.
nlohmann::json run_command(const RunConfig& config, const std::filesystem::path& run_dir);

}  // namespace storm::inline STORM_PREC_NS
