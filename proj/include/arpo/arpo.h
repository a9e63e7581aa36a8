#ifndef ARPO_ARPO_H
#define ARPO_ARPO_H

#include <stddef.h>
#include <stdint.h>

#if defined(ARPO_BUILDING_LIBRARY)
#define ARPO_API __attribute__((visibility("default")))
#else
#define ARPO_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum arpo_status {
  ARPO_OK = 0,
  ARPO_ERR_CONFIG = 1,           /* invalid or inconsistent configuration */
  ARPO_ERR_SPLIT = 2,            /* level style not in the environment's split */
  ARPO_ERR_USAGE = 3,            /* call not valid in the current state */
  ARPO_ERR_SHAPE = 4,            /* buffer or tensor of the wrong size */
  ARPO_ERR_DOMAIN = 5,           /* argument outside its valid range */
  ARPO_ERR_NUMERIC = 6,          /* non-finite loss or value */
  ARPO_ERR_IO = 7,               /* file system or serialization failure */
  ARPO_ERR_INVALID_ARGUMENT = 8, /* null pointer or malformed argument */
  ARPO_ERR_INTERNAL = 99
} arpo_status;

typedef enum arpo_split { ARPO_SPLIT_TRAIN = 0, ARPO_SPLIT_TEST = 1 } arpo_split;

typedef struct arpo_env arpo_env;
typedef struct arpo_run arpo_run;

ARPO_API const char* arpo_version(void);
ARPO_API const char* arpo_status_name(arpo_status status);
/* Message of the last failed call on the calling thread; "" if none. */
ARPO_API const char* arpo_last_error_message(void);
/* Releases strings returned through char** out-parameters. */
ARPO_API void arpo_string_free(char* s);

/* Environment. config_text holds `key = value` lines; only env.* keys are
 * read. Observations are H x W x 3 floats in [0, 1], row-major. */
ARPO_API arpo_status arpo_env_create(const char* config_text, arpo_split split, arpo_env** out);
ARPO_API void arpo_env_destroy(arpo_env* env);
ARPO_API arpo_status arpo_env_observation_shape(const arpo_env* env, int32_t* height, int32_t* width,
                                                int32_t* channels);
ARPO_API arpo_status arpo_env_reset(arpo_env* env, uint64_t layout_seed, int32_t style_id, int32_t dynamic_phase,
                                    float* observation, size_t observation_len);
ARPO_API arpo_status arpo_env_step(arpo_env* env, int32_t action, float* observation, size_t observation_len,
                                   double* reward, int32_t* done);
/* JSON list of levels: the whole train set, or `count` sampled test levels. */
ARPO_API arpo_status arpo_env_export_levels(const char* config_text, arpo_split split, size_t count,
                                            uint64_t seed, char** json_out);

/* Training runs. arpo_run_create starts a fresh run in run_dir (empty
 * run_dir: in memory only). arpo_run_open resumes from the latest
 * checkpoint; with read_only set no file is modified. */
ARPO_API arpo_status arpo_run_create(const char* config_text, const char* run_dir, arpo_run** out);
ARPO_API arpo_status arpo_run_open(const char* run_dir, int32_t read_only, arpo_run** out);
ARPO_API void arpo_run_destroy(arpo_run* run);
/* Negative max_iterations trains until the timestep budget is spent. */
ARPO_API arpo_status arpo_run_train(arpo_run* run, int64_t max_iterations);
ARPO_API arpo_status arpo_run_evaluate(arpo_run* run, arpo_split split, int32_t n_episodes, int32_t greedy,
                                       uint64_t seed, double* mean, double* std);
ARPO_API arpo_status arpo_run_iteration(const arpo_run* run, int64_t* iteration);
ARPO_API arpo_status arpo_run_timesteps(const arpo_run* run, int64_t* timesteps);
ARPO_API arpo_status arpo_run_finished(const arpo_run* run, int32_t* finished);
/* Normalized configuration with every key spelled out. */
ARPO_API arpo_status arpo_config_normalize(const char* config_text, char** out);

/* Fits a style clustering model on n_observations frames rendered from the
 * train split; writes it as JSON and optionally a montage PNG. purity is the
 * fraction of frames whose cluster's majority style matches their own. */
ARPO_API arpo_status arpo_cluster_fit(const char* config_text, int32_t n_clusters, int32_t n_observations,
                                      uint64_t seed, const char* model_path, const char* montage_png,
                                      int32_t* final_clusters, double* purity);
ARPO_API arpo_status arpo_translate_grid(const char* run_dir, const char* png_path, int32_t per_domain);

/* Aggregates finished runs (at least 3 per algorithm) into out_dir. */
ARPO_API arpo_status arpo_report(const char* const* run_dirs, size_t n_runs, const char* out_dir);
/* run_dirs holds n_values groups of runs_per_value directories, in the
 * order of values. */
ARPO_API arpo_status arpo_ablation_report(const char* param, const char* const* values, size_t n_values,
                                          const char* const* run_dirs, size_t runs_per_value, const char* out_dir);

#ifdef __cplusplus
}
#endif

#endif
