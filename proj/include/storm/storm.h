/* C interface to the storm fMRI foundation-model library.
 *
 * Every fallible call returns a storm_status. On failure the message is
 * available from storm_last_error() on the same thread until the next call
 * on that thread fails. Strings returned through char** are owned by the
 * caller and released with storm_free_string. Handles are released with
 * their matching *_free function; passing NULL to a free function is a
 * no-op. Handles may be shared read-only across threads; logging
 * configuration is process-wide.
 */
#ifndef STORM_H
#define STORM_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define STORM_API __declspec(dllexport)
#else
#define STORM_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum storm_status {
  STORM_OK = 0,
  STORM_ERR_CONFIG = 1,
  STORM_ERR_DATA = 2,
  STORM_ERR_FORMAT = 3,
  STORM_ERR_UNSUPPORTED = 4,
  STORM_ERR_LENGTH = 5,
  STORM_ERR_DIMENSION = 6,
  STORM_ERR_TRAINING = 7,
  STORM_ERR_CONTRACT = 8,
  STORM_ERR_INTERNAL = 9,
  STORM_ERR_ARGUMENT = 10 /* NULL handle or out-pointer */
} storm_status;

typedef enum storm_log_level {
  STORM_LOG_DEBUG = 0,
  STORM_LOG_INFO = 1,
  STORM_LOG_WARN = 2,
  STORM_LOG_ERROR = 3
} storm_log_level;

typedef enum storm_direction {
  STORM_BRAIN_TO_IMAGE = 0,
  STORM_IMAGE_TO_BRAIN = 1
} storm_direction;

STORM_API const char* storm_version(void);
STORM_API const char* storm_status_name(storm_status status);
STORM_API const char* storm_last_error(void);
STORM_API void storm_free_string(char* s);

/* Log records go to stderr as "[level] message" unless a callback is set.
 * Passing NULL restores stderr. */
typedef void (*storm_log_fn)(storm_log_level level, const char* message, void* user);
STORM_API void storm_set_log_callback(storm_log_fn fn, void* user);
STORM_API storm_status storm_set_log_level(storm_log_level level);

/* ---- run configurations and commands ---------------------------------- */

typedef struct storm_config storm_config;

/* Commands: synth, preprocess, pretrain, finetune, eval, retrieve, report. */
STORM_API storm_status storm_config_create(const char* command, storm_config** out);
STORM_API void storm_config_free(storm_config* config);
STORM_API storm_status storm_config_set(storm_config* config, const char* key, const char* value);
/* "key=value" */
STORM_API storm_status storm_config_assign(storm_config* config, const char* assignment);
/* Plain-text file, one key = value per line, '#' comments. */
STORM_API storm_status storm_config_load_file(storm_config* config, const char* path);
STORM_API storm_status storm_config_get(const storm_config* config, const char* key, char** value);
STORM_API storm_status storm_config_to_text(const storm_config* config, char** text);

/* JSON description of every command's keys, or of one command. */
STORM_API storm_status storm_command_schema(const char* command_or_null, char** json);

/* Creates <root>/<UTC timestamp>-<command>-seed<seed> and returns its path. */
STORM_API storm_status storm_make_run_dir(const char* root, const char* command, uint64_t seed,
                                          char** path);

/* Runs the configured command, writing outputs, config.txt and
 * summary.json into run_dir. The summary JSON is returned when
 * summary_json is not NULL. */
STORM_API storm_status storm_run(const storm_config* config, const char* run_dir, char** summary_json);

/* ---- volumes ------------------------------------------------------------ */

typedef struct storm_volume storm_volume;

/* dims = {frames, x, y, z}; values start at zero. */
STORM_API storm_status storm_volume_create(const size_t dims[4], const double spacing_mm[3],
                                           double tr_seconds, storm_volume** out);
STORM_API storm_status storm_volume_synth(uint64_t seed, const size_t dims[4], size_t n_networks,
                                          double noise_sd, storm_volume** out);
STORM_API storm_status storm_volume_read_nifti(const char* path, storm_volume** out);
/* float32 payload */
STORM_API storm_status storm_volume_write_nifti(const storm_volume* volume, const char* path);
STORM_API storm_status storm_volume_dims(const storm_volume* volume, size_t dims[4]);
/* Frame-major, then z, y, x (x fastest). The pointer stays valid for the
 * lifetime of the handle. */
STORM_API storm_status storm_volume_data(storm_volume* volume, double** data, size_t* count);
STORM_API void storm_volume_free(storm_volume* volume);

/* ---- encoders ----------------------------------------------------------- */

typedef struct storm_encoder storm_encoder;

/* variant: LowRes, LongSeq, Base or Large */
STORM_API storm_status storm_encoder_create(const char* variant, uint64_t seed, storm_encoder** out);
/* variant may be NULL; otherwise a different stored variant is a config error. */
STORM_API storm_status storm_encoder_load(const char* path, const char* variant, storm_encoder** out);
STORM_API storm_status storm_encoder_save(const storm_encoder* encoder, const char* path);
/* {"config": ..., "params": n, "hash": "<hex>", "feature_dim": d} */
STORM_API storm_status storm_encoder_info(const storm_encoder* encoder, char** json);
/* Pooled features of one volume. *written receives the feature width; a
 * capacity below it is a length error. */
STORM_API storm_status storm_encoder_features(const storm_encoder* encoder, const storm_volume* volume,
                                              float* out, size_t capacity, size_t* written);
STORM_API void storm_encoder_free(storm_encoder* encoder);

/* ---- retrieval ---------------------------------------------------------- */

/* brain and image are n x dim row-major matched pairs. rates receives mean
 * top-1, top-3, top-5 followed by their standard deviations over repeats. */
STORM_API storm_status storm_retrieval_eval(const double* brain, const double* image, size_t n, size_t dim,
                                            size_t n_queries, size_t repeats, uint64_t seed,
                                            storm_direction direction, double rates[6]);

#ifdef __cplusplus
}
#endif

#endif /* STORM_H */
