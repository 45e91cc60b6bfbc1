#include "storm/storm.h"

#include <cstdlib>
#include <cstring>
#include <mutex>
#include <new>

#include "storm/core/log.hpp"
#include "storm/harness/harness.hpp"
#include "storm/io/nifti.hpp"
#include "storm/io/synth.hpp"
#include "storm/model/checkpoint.hpp"
#include "storm/pipeline/pipeline.hpp"

struct storm_config {
  storm::RunConfig config;
};
struct storm_volume {
  storm::Volume4D volume;
};
struct storm_encoder {
  std::unique_ptr<storm::Encoder> encoder;
};

namespace {

thread_local std::string g_last_error;

storm_status status_of(storm::ErrorKind k) {
  using storm::ErrorKind;
  switch (k) {
    case ErrorKind::kConfig: return STORM_ERR_CONFIG;
    case ErrorKind::kData: return STORM_ERR_DATA;
    case ErrorKind::kFormat: return STORM_ERR_FORMAT;
    case ErrorKind::kUnsupported: return STORM_ERR_UNSUPPORTED;
    case ErrorKind::kLength: return STORM_ERR_LENGTH;
    case ErrorKind::kDimension: return STORM_ERR_DIMENSION;
    case ErrorKind::kTraining: return STORM_ERR_TRAINING;
    case ErrorKind::kContract: return STORM_ERR_CONTRACT;
    case ErrorKind::kInternal: return STORM_ERR_INTERNAL;
  }
  return STORM_ERR_INTERNAL;
}

struct ArgumentError {};

template <class... P>
void require(const char* fn, const P*... ptrs) {
  if (((ptrs == nullptr) || ...)) {
    g_last_error = std::string(fn) + ": NULL argument";
    throw ArgumentError{};
  }
}

// Runs f, turning exceptions into a status and the thread's last error.
template <class F>
storm_status guard(F&& f) {
  try {
    f();
    return STORM_OK;
  } catch (const ArgumentError&) {
    return STORM_ERR_ARGUMENT;
  } catch (const storm::Error& e) {
    g_last_error = e.what();
    return status_of(e.kind());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
  } catch (const std::exception& e) {
    g_last_error = e.what();
  } catch (...) {
    g_last_error = "unknown exception";
  }
  return STORM_ERR_INTERNAL;
}

char* dup(const std::string& s) {
  char* p = static_cast<char*>(std::malloc(s.size() + 1));
  if (!p) throw std::bad_alloc();
  std::memcpy(p, s.c_str(), s.size() + 1);
  return p;
}

std::mutex g_log_mutex;
storm_log_fn g_log_fn = nullptr;
void* g_log_user = nullptr;

}  // namespace

extern "C" {

const char* storm_version(void) { return "0.1.0"; }

const char* storm_status_name(storm_status s) {
  switch (s) {
    case STORM_OK: return "ok";
    case STORM_ERR_CONFIG: return "config";
    case STORM_ERR_DATA: return "data";
    case STORM_ERR_FORMAT: return "format";
    case STORM_ERR_UNSUPPORTED: return "unsupported";
    case STORM_ERR_LENGTH: return "length";
    case STORM_ERR_DIMENSION: return "dimension";
    case STORM_ERR_TRAINING: return "training";
    case STORM_ERR_CONTRACT: return "contract";
    case STORM_ERR_INTERNAL: return "internal";
    case STORM_ERR_ARGUMENT: return "argument";
  }
  return "unknown";
}

const char* storm_last_error(void) { return g_last_error.c_str(); }

void storm_free_string(char* s) { std::free(s); }

void storm_set_log_callback(storm_log_fn fn, void* user) {
  std::lock_guard lock(g_log_mutex);
  g_log_fn = fn;
  g_log_user = user;
  if (!fn) {
    storm::set_log_sink({});
    return;
  }
  storm::set_log_sink([](storm::LogLevel level, std::string_view msg) {
    std::lock_guard inner(g_log_mutex);
    if (g_log_fn) g_log_fn(static_cast<storm_log_level>(level), std::string(msg).c_str(), g_log_user);
  });
}

storm_status storm_set_log_level(storm_log_level level) {
  if (level < STORM_LOG_DEBUG || level > STORM_LOG_ERROR) {
    g_last_error = "log level out of range";
    return STORM_ERR_ARGUMENT;
  }
  storm::set_log_level(static_cast<storm::LogLevel>(level));
  return STORM_OK;
}

// ---- configs ----------------------------------------------------------

storm_status storm_config_create(const char* command, storm_config** out) {
  return guard([&] {
    require("storm_config_create", command, out);
    *out = new storm_config{storm::RunConfig(command)};
  });
}

void storm_config_free(storm_config* c) { delete c; }

storm_status storm_config_set(storm_config* c, const char* key, const char* value) {
  return guard([&] {
    require("storm_config_set", c, key, value);
    c->config.set(key, value);
  });
}

storm_status storm_config_assign(storm_config* c, const char* assignment) {
  return guard([&] {
    require("storm_config_assign", c, assignment);
    const auto [k, v] = storm::parse_assignment(assignment);
    c->config.set(k, v);
  });
}

storm_status storm_config_load_file(storm_config* c, const char* path) {
  return guard([&] {
    require("storm_config_load_file", c, path);
    c->config.load_file(path);
  });
}

storm_status storm_config_get(const storm_config* c, const char* key, char** value) {
  return guard([&] {
    require("storm_config_get", c, key, value);
    *value = dup(c->config.get(key));
  });
}

storm_status storm_config_to_text(const storm_config* c, char** text) {
  return guard([&] {
    require("storm_config_to_text", c, text);
    *text = dup(c->config.to_text());
  });
}

storm_status storm_command_schema(const char* command, char** json) {
  return guard([&] {
    require("storm_command_schema", json);
    auto describe = [](const storm::CommandSpec& s) {
      nlohmann::json keys = nlohmann::json::array();
      for (const auto& k : s.keys)
        keys.push_back({{"name", k.name}, {"default", k.default_value}, {"help", k.help}});
      return nlohmann::json{{"command", s.name}, {"help", s.help}, {"keys", keys}};
    };
    nlohmann::json j;
    if (command) {
      j = describe(storm::command_spec(command));
    } else {
      j = nlohmann::json::array();
      for (const auto& s : storm::command_specs()) j.push_back(describe(s));
    }
    *json = dup(j.dump());
  });
}

storm_status storm_make_run_dir(const char* root, const char* command, uint64_t seed, char** path) {
  return guard([&] {
    require("storm_make_run_dir", root, command, path);
    storm::command_spec(command);
    *path = dup(storm::make_run_dir(root, command, seed).string());
  });
}

storm_status storm_run(const storm_config* c, const char* run_dir, char** summary) {
  return guard([&] {
    require("storm_run", c, run_dir);
    const auto s = storm::run_command(c->config, run_dir);
    if (summary) *summary = dup(s.dump());
  });
}

// ---- volumes ----------------------------------------------------------

storm_status storm_volume_create(const size_t dims[4], const double spacing[3], double tr, storm_volume** out) {
  return guard([&] {
    require("storm_volume_create", dims, spacing, out);
    storm::Volume4D v({dims[0], dims[1], dims[2], dims[3]}, {spacing[0], spacing[1], spacing[2]}, tr);
    v.validate();
    *out = new storm_volume{std::move(v)};
  });
}

storm_status storm_volume_synth(uint64_t seed, const size_t dims[4], size_t n_networks, double noise_sd,
                                storm_volume** out) {
  return guard([&] {
    require("storm_volume_synth", dims, out);
    storm::SynthConfig sc;
    sc.seed = seed;
    sc.dims = {dims[0], dims[1], dims[2], dims[3]};
    sc.n_latent_networks = n_networks;
    sc.noise_sd = noise_sd;
    *out = new storm_volume{storm::synth_fmri(sc).volume};
  });
}

storm_status storm_volume_read_nifti(const char* path, storm_volume** out) {
  return guard([&] {
    require("storm_volume_read_nifti", path, out);
    *out = new storm_volume{storm::read_nifti1(path)};
  });
}

storm_status storm_volume_write_nifti(const storm_volume* v, const char* path) {
  return guard([&] {
    require("storm_volume_write_nifti", v, path);
    storm::write_nifti1(path, v->volume);
  });
}

storm_status storm_volume_dims(const storm_volume* v, size_t dims[4]) {
  return guard([&] {
    require("storm_volume_dims", v, dims);
    const auto& d = v->volume.dims;
    dims[0] = d.t, dims[1] = d.x, dims[2] = d.y, dims[3] = d.z;
  });
}

storm_status storm_volume_data(storm_volume* v, double** data, size_t* count) {
  return guard([&] {
    require("storm_volume_data", v, data, count);
    *data = v->volume.data.data();
    *count = v->volume.data.size();
  });
}

void storm_volume_free(storm_volume* v) { delete v; }

// ---- encoders ---------------------------------------------------------

storm_status storm_encoder_create(const char* variant, uint64_t seed, storm_encoder** out) {
  return guard([&] {
    require("storm_encoder_create", variant, out);
    auto cfg = storm::variant_config(variant);
    cfg.seed = seed;
    *out = new storm_encoder{std::make_unique<storm::Encoder>(cfg)};
  });
}

storm_status storm_encoder_load(const char* path, const char* variant, storm_encoder** out) {
  return guard([&] {
    require("storm_encoder_load", path, out);
    *out = new storm_encoder{storm::load_encoder(path, variant ? variant : "")};
  });
}

storm_status storm_encoder_save(const storm_encoder* e, const char* path) {
  return guard([&] {
    require("storm_encoder_save", e, path);
    storm::save_encoder(path, *e->encoder);
  });
}

storm_status storm_encoder_info(const storm_encoder* e, char** json) {
  return guard([&] {
    require("storm_encoder_info", e, json);
    const storm::Encoder& enc = *e->encoder;
    const nlohmann::json j{{"config", storm::to_json(enc.config())},
                           {"params", enc.param_count()},
                           {"hash", storm::hex64(storm::params_hash(enc.params()))},
                           {"feature_dim", enc.config().out_dim()}};
    *json = dup(j.dump());
  });
}

storm_status storm_encoder_features(const storm_encoder* e, const storm_volume* v, float* out, size_t capacity,
                                    size_t* written) {
  return guard([&] {
    require("storm_encoder_features", e, v, written);
    const std::size_t d = e->encoder->config().out_dim();
    *written = d;
    STORM_CHECK(out != nullptr && capacity >= d, storm::ErrorKind::kLength, "feature buffer holds ",
                capacity, " values, need ", d);
    storm::NoGradScope ng;
    const auto f = e->encoder->forward(storm::volume_tensor(v->volume)).features;
    for (std::size_t i = 0; i < d; ++i) out[i] = static_cast<float>(f.data()[i]);
  });
}

void storm_encoder_free(storm_encoder* e) { delete e; }

// ---- retrieval --------------------------------------------------------

storm_status storm_retrieval_eval(const double* brain, const double* image, size_t n, size_t dim,
                                  size_t n_queries, size_t repeats, uint64_t seed, storm_direction direction,
                                  double rates[6]) {
  return guard([&] {
    require("storm_retrieval_eval", brain, image, rates);
    storm::Embeddings b{n, dim, std::vector<double>(brain, brain + n * dim)};
    storm::Embeddings i{n, dim, std::vector<double>(image, image + n * dim)};
    storm::RetrievalConfig rc;
    rc.n_queries = n_queries;
    rc.repeats = repeats;
    rc.seed = seed;
    rc.direction = direction == STORM_IMAGE_TO_BRAIN ? storm::RetrievalDirection::kImageToBrain
                                                     : storm::RetrievalDirection::kBrainToImage;
    const auto r = storm::retrieval_eval(b, i, rc);
    const double v[6] = {r.top1, r.top3, r.top5, r.top1_sd, r.top3_sd, r.top5_sd};
    std::memcpy(rates, v, sizeof v);
  });
}

}  // extern "C"
