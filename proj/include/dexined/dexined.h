#ifndef DEXINED_DEXINED_H
#define DEXINED_DEXINED_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(DEXINED_BUILDING_LIBRARY)
#define DX_API __attribute__((visibility("default")))
#else
#define DX_API
#endif

typedef enum dx_status {
  DX_OK = 0,
  DX_ERR_IO = 1,
  DX_ERR_CONFIG = 2,
  DX_ERR_NUMERIC = 3,
  DX_ERR_SELFCHECK = 4,
  DX_ERR_SHAPE = 5,
  DX_ERR_FORMAT = 6,
  DX_ERR_INTERNAL = 7
} dx_status;

/* Number of maps produced per image: out1..out6, fused, averaged. */
#define DX_MAP_COUNT 8

DX_API const char* dx_version(void);

/* Message for the last failing call on this thread; empty when none. */
DX_API const char* dx_last_error(void);

DX_API void dx_string_free(char* s);

typedef void (*dx_log_fn)(const char* message, void* user);

/* Full run configuration as JSON: defaults <- file <- overrides (a JSON merge
 * patch). Either input may be NULL. Free the result with dx_string_free. */
DX_API dx_status dx_resolve_config(const char* config_path, const char* overrides_json, char** resolved_json);

typedef struct dx_model dx_model;

/* model_config_json is the "model" section; NULL means the full-size default. */
DX_API dx_status dx_model_create(const char* model_config_json, uint64_t seed, dx_model** out);
DX_API dx_status dx_model_load(const char* checkpoint_path, dx_model** out);
DX_API dx_status dx_model_save(const dx_model* model, const char* checkpoint_path);
DX_API void dx_model_free(dx_model* model);
DX_API size_t dx_model_parameter_count(const dx_model* model);

/* rgb is interleaved HWC in [0, 1]. maps receives DX_MAP_COUNT planes of
 * width * height probabilities. */
DX_API dx_status dx_model_predict(dx_model* model, const float* rgb, int width, int height, float* maps);

/* maps: "all", "fused" or "avg". Non-PNG files are reported through warn and
 * skipped. */
DX_API dx_status dx_predict_directory(const char* checkpoint_path, const char* input_dir, const char* output_dir,
                                      const char* maps, dx_log_fn warn, void* user, size_t* written);

/* config_json is a resolved run configuration (or NULL for defaults). */
DX_API dx_status dx_augment(const char* input_root, const char* output_root, const char* config_json,
                            dx_log_fn warn, void* user, size_t* written, size_t* skipped);

typedef struct dx_train_step {
  int64_t step;
  double total;
  double per_output[7];
  double wall_time;
} dx_train_step;

typedef void (*dx_train_fn)(const dx_train_step* step, void* user);

/* resume_checkpoint may be NULL. */
DX_API dx_status dx_train(const char* data_root, const char* output_dir, const char* config_json,
                          const char* resume_checkpoint, dx_train_fn on_step, void* user, int64_t* final_step);

typedef struct dx_eval_summary {
  double ods;
  double ods_threshold;
  double ois;
  double ap;
  size_t image_count;
} dx_eval_summary;

/* output_dir may be NULL to skip pr_curve.csv / summary.json. */
DX_API dx_status dx_evaluate_directories(const char* pred_dir, const char* gt_dir, const char* output_dir,
                                         const char* config_json, dx_eval_summary* out);

/* In-memory variant: count single-channel maps, row-major, values in [0, 1]. */
DX_API dx_status dx_evaluate_maps(const float* const* preds, const float* const* gts, const int* widths,
                                  const int* heights, size_t count, const char* config_json, dx_eval_summary* out);

typedef void (*dx_selfcheck_fn)(const char* group, int passed, const char* detail, double seconds, void* user);

/* perturb names an op to break on purpose (test hook); NULL for a normal run.
 * Returns DX_ERR_SELFCHECK when any group fails. */
DX_API dx_status dx_selfcheck(uint64_t seed, const char* perturb, dx_selfcheck_fn on_group, void* user);

#ifdef __cplusplus
}
#endif

#endif
