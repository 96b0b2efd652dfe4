/*
 * gazediff — diffusion-based gaze scanpath generation and evaluation.
 *
 * C interface of the shared library: opaque handles plus status codes.
 * All functions returning gd_status report GD_OK on success; on failure the
 * thread-local message from gd_last_error() describes what went wrong.
 * Handles are created by gd_*_load/gd_sample/gd_eval and released with the
 * matching gd_*_free; passing NULL to a free function is a no-op.
 */

#ifndef GAZEDIFF_H
#define GAZEDIFF_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32) && defined(GAZEDIFF_SHARED)
#ifdef GAZEDIFF_BUILD
#define GD_API __declspec(dllexport)
#else
#define GD_API __declspec(dllimport)
#endif
#elif defined(__GNUC__)
#define GD_API __attribute__((visibility("default")))
#else
#define GD_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Mirrors the CLI exit-code contract. */
typedef enum gd_status {
    GD_OK = 0,
    GD_ERR_USAGE = 1,   /* bad arguments / configuration */
    GD_ERR_DATA = 2,    /* data, file format or integrity failure */
    GD_ERR_NUMERIC = 3  /* numerical failure (NaN loss, diverged model) */
} gd_status;

typedef struct gd_corpus gd_corpus; /* scanpath corpus (JSONL) */
typedef struct gd_model gd_model;   /* trained denoiser checkpoint */
typedef struct gd_report gd_report; /* evaluation report (JSON) */

GD_API const char * gd_version(void);

/* Thread-local message for the most recent failure in this thread. */
GD_API const char * gd_last_error(void);

/* ---- corpora ---------------------------------------------------------- */

GD_API gd_status gd_corpus_load(const char * path, gd_corpus ** out);
GD_API gd_status gd_corpus_save(const gd_corpus * corpus, const char * path);
GD_API size_t gd_corpus_size(const gd_corpus * corpus);
GD_API void gd_corpus_free(gd_corpus * corpus);

/* ---- synthetic data --------------------------------------------------- */

/* Generates corpus.jsonl, features/ and segmaps/ under out_dir. */
GD_API gd_status gd_synth(const char * spec_path, uint64_t seed, const char * out_dir);

/* ---- training --------------------------------------------------------- */

/*
 * Runs the training loop described by the JSON config over the corpus, with
 * SDFT features resolved from features_dir. Writes <out_dir>/model.sdkp.
 * resume_path may be NULL; when set, training continues bit-exactly from
 * that checkpoint. Progress lines go to stderr when verbose is nonzero.
 */
GD_API gd_status gd_train(const char * config_path, const char * corpus_path,
                          const char * features_dir, const char * out_dir,
                          const char * resume_path, int verbose);

/* ---- sampling --------------------------------------------------------- */

GD_API gd_status gd_model_load(const char * checkpoint_path, gd_model ** out);
GD_API void gd_model_free(gd_model * model);

/*
 * Draws n scanpaths for (stimulus_id, task) from distinct noise seeds
 * derived from seed; subject ids are "gen:<seed>:<index>". width_px and
 * height_px scale the emitted pixel coordinates (use 1 for normalized
 * output). threads <= 0 picks the hardware concurrency.
 */
GD_API gd_status gd_sample(const gd_model * model, const char * features_dir,
                           const char * stimulus_id, const char * task, int n, uint64_t seed,
                           int threads, int width_px, int height_px, gd_corpus ** out);

/* ---- evaluation ------------------------------------------------------- */

/*
 * Computes the full metric suite for a (generated, human) corpus pair.
 * segmap_dir may be NULL (semantic scores are skipped); options_json may be
 * NULL for defaults, otherwise a JSON object of evaluation options.
 */
GD_API gd_status gd_eval(const gd_corpus * generated, const gd_corpus * human,
                         const char * segmap_dir, const char * options_json, gd_report ** out);

GD_API gd_status gd_report_save(const gd_report * report, const char * path);
GD_API const char * gd_report_json(const gd_report * report);
GD_API void gd_report_free(gd_report * report);

/* ---- numerics oracle --------------------------------------------------- */

/*
 * Finite-difference gradient verification over all differentiable ops and
 * the toy denoiser. Returns GD_OK when the maximum relative error stays
 * below the tolerance; out_max_rel_err may be NULL.
 */
GD_API gd_status gd_gradcheck(uint64_t seeds, int verbose, double * out_max_rel_err);

#ifdef __cplusplus
}
#endif

#endif /* GAZEDIFF_H */
