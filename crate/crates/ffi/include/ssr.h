#ifndef SSR_H
#define SSR_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SsrStatus {
  SSR_STATUS_OK = 0,
  SSR_STATUS_NULL_POINTER = 1,
  SSR_STATUS_INVALID_ARGUMENT = 2,
  SSR_STATUS_NOT_FOUND = 3,
  SSR_STATUS_IO = 4,
  SSR_STATUS_RUNTIME = 5,
  SSR_STATUS_PANIC = 6,
} SsrStatus;

/**
 * Experiment configuration.
 */
typedef struct SsrConfig SsrConfig;

/**
 * A run directory with its config and corpus loaded.
 */
typedef struct SsrRun SsrRun;

/**
 * Test-split scores of one captioner.
 */
typedef struct SsrScores {
  size_t items;
  double bleu[4];
  double cider;
  double r_flc;
  double r_srlv;
} SsrScores;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version, a static string.
 */
const char *ssr_version(void);

/**
 * Message for the most recent failure on this thread, or null. Valid until
 * the next call into the library from the same thread.
 */
const char *ssr_last_error(void);

/**
 * # Safety
 * `s` must be null or a string returned by this library, not yet freed.
 */
void ssr_string_free(char *s);

/**
 * Built-in configuration `"desk"` or `"published"`.
 *
 * # Safety
 * `name` must be a nul-terminated string; `out` must be writable.
 */
enum SsrStatus ssr_config_preset(const char *name, struct SsrConfig **out);

/**
 * Configuration from TOML text.
 *
 * # Safety
 * `toml` must be a nul-terminated string; `out` must be writable.
 */
enum SsrStatus ssr_config_from_toml(const char *toml, struct SsrConfig **out);

/**
 * Configuration from a TOML file.
 *
 * # Safety
 * `path` must be a nul-terminated string; `out` must be writable.
 */
enum SsrStatus ssr_config_load(const char *path, struct SsrConfig **out);

/**
 * The configuration as TOML; free the result with [`ssr_string_free`].
 *
 * # Safety
 * `cfg` must be a live config handle; `out` must be writable.
 */
enum SsrStatus ssr_config_to_toml(const struct SsrConfig *cfg, char **out);

/**
 * # Safety
 * `cfg` must be a live config handle.
 */
enum SsrStatus ssr_config_set_seed(struct SsrConfig *cfg, uint64_t seed);

/**
 * Noise rates of the pseudo-translator, each in `[0, 1]`.
 *
 * # Safety
 * `cfg` must be a live config handle.
 */
enum SsrStatus ssr_config_set_noise(struct SsrConfig *cfg, double disfluency, double irrelevancy);

/**
 * # Safety
 * `cfg` must be null or a handle from this library, not yet freed.
 */
void ssr_config_free(struct SsrConfig *cfg);

/**
 * Generates the world, dataset and vocabularies into `dir`.
 *
 * # Safety
 * `cfg` must be a live config handle; `dir` a nul-terminated path.
 */
enum SsrStatus ssr_make_dataset(const struct SsrConfig *cfg, const char *dir);

/**
 * Every training phase and mode of `cfg`, writing all artifacts into `dir`.
 *
 * # Safety
 * `cfg` must be a live config handle; `dir` a nul-terminated path.
 */
enum SsrStatus ssr_run_experiment(const struct SsrConfig *cfg, const char *dir);

/**
 * Opens a run directory holding at least a generated dataset.
 *
 * # Safety
 * `dir` must be a nul-terminated path; `out` must be writable.
 */
enum SsrStatus ssr_run_open(const char *dir, struct SsrRun **out);

/**
 * # Safety
 * `run` must be null or a handle from this library, not yet freed.
 */
void ssr_run_free(struct SsrRun *run);

/**
 * Beam-decodes one image with the captioner trained under `mode`
 * (`"baseline"` is the pretrained one). Free the caption with
 * [`ssr_string_free`].
 *
 * # Safety
 * `run` must be a live run handle, `mode` a nul-terminated string and `out`
 * writable.
 */
enum SsrStatus ssr_run_generate(const struct SsrRun *run,
                                const char *mode,
                                uint64_t image_id,
                                size_t beam,
                                char **out);

/**
 * Scores the `mode` captioner on the test split with beam size `beam`.
 *
 * # Safety
 * `run` must be a live run handle, `mode` a nul-terminated string and `out`
 * writable.
 */
enum SsrStatus ssr_run_evaluate(const struct SsrRun *run,
                                const char *mode,
                                size_t beam,
                                struct SsrScores *out);

/**
 * Finite-difference check of every op and loss over `trials` random
 * instances. Writes the worst relative error; `*passed` is whether every
 * op stayed under the tolerance.
 *
 * # Safety
 * `max_rel_err` and `passed` must be writable.
 */
enum SsrStatus ssr_gradcheck(uint64_t seed, size_t trials, double *max_rel_err, bool *passed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SSR_H */
