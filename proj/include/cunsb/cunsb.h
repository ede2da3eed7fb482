/*
 * C interface to the cunsb library: bridge-based fundus enhancement.
 *
 * All functions return a cunsb_status. On failure a message is available
 * from cunsb_last_error() on the calling thread until the next call.
 * Handles are opaque and owned by the caller; release them with the
 * matching *_free function. Passing NULL to a *_free function is a no-op.
 */
#ifndef CUNSB_H
#define CUNSB_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define CUNSB_API __declspec(dllexport)
#else
#define CUNSB_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum cunsb_status {
  CUNSB_OK = 0,
  CUNSB_ERR_USAGE = 1,      /* bad argument, unknown config key, invalid setting */
  CUNSB_ERR_DATA = 2,       /* unreadable or malformed input data */
  CUNSB_ERR_CHECKPOINT = 3, /* corrupt, foreign or mismatched checkpoint */
  CUNSB_ERR_INTERNAL = 4
} cunsb_status;

typedef struct cunsb_config cunsb_config;
typedef struct cunsb_model cunsb_model;
typedef struct cunsb_image cunsb_image;

typedef struct cunsb_loss_report {
  double adv;
  double sb_transport;
  double sb_entropy;
  double ssim_gen;
  double ssim_idt;
  double patchnce;
  double total;
  double discriminator_loss;
  double critic_statistic;
  int t_index;
} cunsb_loss_report;

typedef struct cunsb_eval_summary {
  int processed;
  int skipped;
  double psnr_mean; /* +inf when every pair is identical */
  double ssim_mean;
} cunsb_eval_summary;

CUNSB_API const char* cunsb_version(void);
CUNSB_API const char* cunsb_last_error(void);
CUNSB_API const char* cunsb_status_name(cunsb_status status);

/* Configuration. create/load apply the CUNSB_SEED environment override. */
CUNSB_API cunsb_status cunsb_config_create(cunsb_config** out);
CUNSB_API cunsb_status cunsb_config_load(const char* path, cunsb_config** out);
CUNSB_API cunsb_status cunsb_config_set(cunsb_config* config, const char* key, const char* value);
/* Copies the value (NUL-terminated) into buf when it fits; *needed gets the
 * required size including the terminator. */
CUNSB_API cunsb_status cunsb_config_get(const cunsb_config* config, const char* key, char* buf, size_t capacity,
                                        size_t* needed);
CUNSB_API void cunsb_config_free(cunsb_config* config);

/* 8-bit images, interleaved rows, 1 or 3 channels. */
CUNSB_API cunsb_status cunsb_image_create(int width, int height, int channels, const uint8_t* pixels,
                                          cunsb_image** out);
CUNSB_API cunsb_status cunsb_image_load_png(const char* path, cunsb_image** out);
CUNSB_API cunsb_status cunsb_image_save_png(const cunsb_image* image, const char* path);
CUNSB_API int cunsb_image_width(const cunsb_image* image);
CUNSB_API int cunsb_image_height(const cunsb_image* image);
CUNSB_API int cunsb_image_channels(const cunsb_image* image);
CUNSB_API const uint8_t* cunsb_image_pixels(const cunsb_image* image);
CUNSB_API void cunsb_image_free(cunsb_image* image);

/* Models. A model holds all networks and optimizer state. */
CUNSB_API cunsb_status cunsb_model_create(const cunsb_config* config, cunsb_model** out);
/* expected may be NULL; otherwise its architecture must match the file. */
CUNSB_API cunsb_status cunsb_model_load(const char* path, const cunsb_config* expected, cunsb_model** out);
CUNSB_API cunsb_status cunsb_model_save(const cunsb_model* model, const char* path);
CUNSB_API int cunsb_model_num_steps(const cunsb_model* model);
CUNSB_API void cunsb_model_free(cunsb_model* model);

/* One optimisation step on `count` unpaired low/high images of equal size. */
CUNSB_API cunsb_status cunsb_model_train_step(cunsb_model* model, const cunsb_image* const* low,
                                              const cunsb_image* const* high, size_t count,
                                              cunsb_loss_report* report);
/* Epoch loop over two PNG directories. Writes train_log.csv, checkpoints
 * and sample grids below out_dir. max_epochs < 0 runs to the configured end. */
CUNSB_API cunsb_status cunsb_model_train(cunsb_model* model, const char* low_dir, const char* high_dir,
                                         const char* out_dir, int max_epochs);

/* Enhances one 3-channel image. step in [0, N) selects one output; step < 0
 * produces all N. Writes up to `capacity` images to outs and the produced
 * count to *count. */
CUNSB_API cunsb_status cunsb_model_enhance(const cunsb_model* model, const cunsb_image* input, int step,
                                           uint64_t seed, cunsb_image** outs, size_t capacity, size_t* count);
/* File or directory input; step < 0 writes <id>_step<k>.png for all steps. */
CUNSB_API cunsb_status cunsb_enhance_path(const cunsb_model* model, const char* input, const char* out_dir, int step,
                                          uint64_t seed, size_t* written);

/* Degrades every PNG in in_dir with the degrade.* settings of config (NULL
 * for defaults), writing images and .record.txt sidecars. */
CUNSB_API cunsb_status cunsb_degrade_dir(const char* in_dir, const char* out_dir, const cunsb_config* config,
                                         uint64_t seed, size_t* count);

/* Paired evaluation; writes metrics.csv, summary.csv, overall.csv and, with
 * per_step, metrics_per_step.png into out_dir (NULL writes nothing). */
CUNSB_API cunsb_status cunsb_evaluate(const char* enhanced_dir, const char* truth_dir, int per_step, int image_size,
                                      const char* out_dir, cunsb_eval_summary* summary);

#ifdef __cplusplus
}
#endif

#endif /* CUNSB_H */
