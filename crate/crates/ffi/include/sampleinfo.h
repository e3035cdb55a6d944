#ifndef SAMPLEINFO_H
#define SAMPLEINFO_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SiSmoothing {
  SI_SMOOTHING_IDENTITY = 0,
  SI_SMOOTHING_ISOTROPIC_SGD = 1,
  SI_SMOOTHING_LYAPUNOV = 2,
  SI_SMOOTHING_FISHER = 3,
} SiSmoothing;

/**
 * Result of every fallible call.
 */
typedef enum SiStatus {
  SI_STATUS_OK = 0,
  SI_STATUS_NULL_POINTER = 1,
  SI_STATUS_INVALID_ARGUMENT = 2,
  SI_STATUS_DIMENSION = 3,
  SI_STATUS_NUMERICAL = 4,
  SI_STATUS_FORMAT = 5,
  SI_STATUS_IO = 6,
  SI_STATUS_PANIC = 7,
} SiStatus;

typedef enum SiMeasure {
  SI_MEASURE_FSI = 0,
  SI_MEASURE_SI = 1,
} SiMeasure;

/**
 * Opaque per-sample score report.
 */
typedef struct SiScores SiScores;

/**
 * Opaque Jacobian store.
 */
typedef struct SiStore SiStore;

/**
 * Training and scoring settings. `time` may be `INFINITY`.
 */
typedef struct SiConfig {
  double eta;
  double time;
  double lambda;
  size_t batch;
  double sigma;
  enum SiSmoothing smoothing;
} SiConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty if none. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *si_last_error(void);

/**
 * Default settings: eta 1e-3, time 2000, lambda 0, batch 1, sigma 1, identity smoothing.
 */
struct SiConfig si_config_default(void);

/**
 * Builds an unsketched store from row-major arrays: `jacobian` is
 * `(n·k) × d` with row `i·k + o`, `f0` is `n × k`.
 */
enum SiStatus si_store_from_dense(size_t n,
                                  size_t k,
                                  size_t d,
                                  const double *jacobian,
                                  const double *f0,
                                  struct SiStore **out);

/**
 * Reads a JLF Jacobian file.
 */
enum SiStatus si_store_read(const char *path, struct SiStore **out);

enum SiStatus si_store_write(const struct SiStore *store, const char *path);

/**
 * Keeps `d0_per_layer` random coordinates of every layer.
 */
enum SiStatus si_store_sketch(const struct SiStore *store,
                              size_t d0_per_layer,
                              uint64_t seed,
                              struct SiStore **out);

/**
 * Number of samples; 0 for a null handle.
 */
size_t si_store_n(const struct SiStore *store);

/**
 * Outputs per sample; 0 for a null handle.
 */
size_t si_store_k(const struct SiStore *store);

/**
 * Kept coordinates over all layers; 0 for a null handle.
 */
size_t si_store_d0(const struct SiStore *store);

void si_store_free(struct SiStore *store);

/**
 * Leave-one-out scores of every training sample. `targets` is row-major
 * `n × k`. `val` may be null, in which case F-SI is measured on the
 * training inputs.
 */
enum SiStatus si_score(const struct SiStore *train,
                       const double *targets,
                       const struct SiStore *val,
                       const struct SiConfig *config,
                       enum SiMeasure measure,
                       struct SiScores **out);

/**
 * Number of scores; 0 for a null handle.
 */
size_t si_scores_len(const struct SiScores *scores);

/**
 * Copies the scores into `buf`, which must hold `len` doubles; `len` must
 * equal `si_scores_len`.
 */
enum SiStatus si_scores_values(const struct SiScores *scores, double *buf, size_t len);

/**
 * Copies the ascending ranks (0 = least informative, ties by index).
 */
enum SiStatus si_scores_ranks(const struct SiScores *scores, size_t *buf, size_t len);

/**
 * Writes the report as CSV (config hash header, then index,score,rank,group,flag).
 */
enum SiStatus si_scores_write_csv(const struct SiScores *scores, const char *path);

void si_scores_free(struct SiScores *scores);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SAMPLEINFO_H */
