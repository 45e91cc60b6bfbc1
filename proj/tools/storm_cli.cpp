// storm command-line entry point. Every command resolves a key-value
// configuration, creates a run directory and hands off to the library.

#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "storm/storm.h"

namespace {

struct CString {
  char* p = nullptr;
  ~CString() { storm_free_string(p); }
  std::string str() const { return p ? p : ""; }
};

[[noreturn]] void die(storm_status s, const std::string& context) {
  std::cerr << "error [" << storm_status_name(s) << "]: " << context << storm_last_error() << '\n';
  std::exit(static_cast<int>(s));
}

void check(storm_status s, const std::string& context = {}) {
  if (s != STORM_OK) die(s, context);
}

nlohmann::json schema() {
  CString s;
  check(storm_command_schema(nullptr, &s.p));
  return nlohmann::json::parse(s.str());
}

std::string key_help(const nlohmann::json& cmd) {
  std::string out = "Keys (key=value, defaults in brackets):\n";
  for (const auto& k : cmd.at("keys")) {
    std::string line = "  " + k.at("name").get<std::string>();
    line.resize(std::max<std::size_t>(line.size() + 1, 16), ' ');
    out += line + k.at("help").get<std::string>() + " [" + k.at("default").get<std::string>() + "]\n";
  }
  return out;
}

storm_log_level parse_level(const std::string& s) {
  if (s == "debug") return STORM_LOG_DEBUG;
  if (s == "warn") return STORM_LOG_WARN;
  if (s == "error") return STORM_LOG_ERROR;
  return STORM_LOG_INFO;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"storm: 4D fMRI foundation-model pipeline"};
  app.require_subcommand(1);
  std::string run_root, log_level = "info";
  app.add_option("--run-root", run_root, "root for run directories (default $STORM_RUN_ROOT, else ./runs)");
  app.add_option("--log-level", log_level, "debug, info, warn or error")
      ->check(CLI::IsMember({"debug", "info", "warn", "error"}));

  struct Sub {
    CLI::App* app;
    std::string name, config_file, run_dir;
    std::vector<std::string> assignments;
  };
  std::vector<std::unique_ptr<Sub>> subs;
  const nlohmann::json specs = schema();
  for (const auto& spec : specs) {
    auto s = std::make_unique<Sub>();
    s->name = spec.at("command").get<std::string>();
    s->app = app.add_subcommand(s->name, spec.at("help").get<std::string>());
    s->app->add_option("--config", s->config_file, "key = value file loaded before overrides");
    s->app->add_option("--run-dir", s->run_dir, "exact output directory instead of a new timestamped one");
    s->app->add_option("assignments", s->assignments, "key=value overrides");
    s->app->footer(key_help(spec));
    subs.push_back(std::move(s));
  }
  CLI11_PARSE(app, argc, argv);

  check(storm_set_log_level(parse_level(log_level)));
  const Sub* sub = nullptr;
  for (const auto& s : subs)
    if (s->app->parsed()) sub = s.get();

  storm_config* raw = nullptr;
  check(storm_config_create(sub->name.c_str(), &raw));
  std::unique_ptr<storm_config, decltype(&storm_config_free)> cfg(raw, storm_config_free);
  if (!sub->config_file.empty()) check(storm_config_load_file(cfg.get(), sub->config_file.c_str()));
  for (const auto& a : sub->assignments) check(storm_config_assign(cfg.get(), a.c_str()));

  std::string dir = sub->run_dir;
  if (dir.empty()) {
    if (run_root.empty()) {
      const char* env = std::getenv("STORM_RUN_ROOT");
      run_root = env && *env ? env : "runs";
    }
    CString seed;
    check(storm_config_get(cfg.get(), "seed", &seed.p));
    std::uint64_t seed_value = 0;
    try {
      seed_value = static_cast<std::uint64_t>(std::stoll(seed.str()));
    } catch (...) {
    }
    CString path;
    check(storm_make_run_dir(run_root.c_str(), sub->name.c_str(), seed_value, &path.p));
    dir = path.str();
  }
  CString summary;
  check(storm_run(cfg.get(), dir.c_str(), &summary.p), sub->name + ": ");
  std::cout << dir << '\n';
  return 0;
}
