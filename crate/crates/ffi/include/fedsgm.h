#ifndef FEDSGM_H
#define FEDSGM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FedsgmStatus {
  FEDSGM_STATUS_OK = 0,
  FEDSGM_STATUS_NULL_POINTER = 1,
  FEDSGM_STATUS_INVALID_ARGUMENT = 2,
  FEDSGM_STATUS_INVALID_CONFIG = 3,
  FEDSGM_STATUS_DIVERGED = 4,
  FEDSGM_STATUS_IO = 5,
  FEDSGM_STATUS_OUT_OF_RANGE = 6,
  FEDSGM_STATUS_PANIC = 7,
} FedsgmStatus;

typedef enum FedsgmCompressorKind {
  FEDSGM_COMPRESSOR_KIND_IDENTITY = 0,
  FEDSGM_COMPRESSOR_KIND_TOP_K = 1,
  FEDSGM_COMPRESSOR_KIND_RAND_K = 2,
  FEDSGM_COMPRESSOR_KIND_UNIFORM_QUANT = 3,
} FedsgmCompressorKind;

typedef enum FedsgmRegime {
  FEDSGM_REGIME_FULL = 0,
  FEDSGM_REGIME_PARTIAL = 1,
  FEDSGM_REGIME_PARTIAL_UNCOMPRESSED = 2,
} FedsgmRegime;

/**
 * Opaque federated problem.
 */
typedef struct FedsgmProblem FedsgmProblem;

/**
 * Opaque record of a finished run.
 */
typedef struct FedsgmTrace FedsgmTrace;

typedef struct FedsgmSyntheticParams {
  size_t rows;
  size_t features;
  /**
   * Fraction of rows in the constrained class.
   */
  double class_balance;
  double separation;
  size_t clients;
  uint64_t seed;
  /**
   * Half-width of the box domain; zero or negative for an unbounded one.
   */
  double box_half_width;
} FedsgmSyntheticParams;

typedef struct FedsgmLinearBallParams {
  /**
   * Objective direction, `dim` entries.
   */
  const double *direction;
  size_t dim;
  double radius;
  double half_width;
  size_t clients;
  double perturbation;
  uint64_t seed;
} FedsgmLinearBallParams;

typedef struct FedsgmProblemInfo {
  size_t dim;
  size_t clients;
  double lipschitz;
  /**
   * NaN when the domain is unbounded.
   */
  double diameter;
} FedsgmProblemInfo;

typedef struct FedsgmCompressor {
  enum FedsgmCompressorKind kind;
  /**
   * Kept coordinates for the sparsifiers, bit width for the quantizer.
   */
  uint32_t param;
} FedsgmCompressor;

typedef struct FedsgmRunConfig {
  size_t rounds;
  size_t local_steps;
  size_t participants;
  double eta;
  double epsilon;
  /**
   * Zero for hard switching; otherwise the soft-switching sharpness.
   */
  double beta;
  bool compress;
  struct FedsgmCompressor uplink;
  struct FedsgmCompressor downlink;
  uint64_t seed;
  /**
   * Worker threads; 1 runs serially. Results do not depend on it.
   */
  size_t workers;
} FedsgmRunConfig;

typedef struct FedsgmRoundRecord {
  size_t t;
  double g_hat;
  double g_true;
  double f_true;
  double switch_weight;
  bool in_a;
  uint64_t uplink_bytes;
  uint64_t downlink_bytes;
} FedsgmRoundRecord;

typedef struct FedsgmTheoremInputs {
  enum FedsgmRegime regime;
  double distance;
  double lipschitz;
  size_t local_steps;
  size_t rounds;
  size_t clients;
  size_t participants;
  double q;
  double q0;
  double sigma;
  double delta;
} FedsgmTheoremInputs;

typedef struct FedsgmTheoremOutputs {
  double gamma;
  double eta;
  double epsilon;
} FedsgmTheoremOutputs;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL. The pointer is
 * valid until the next fedsgm call on the same thread.
 */
const char *fedsgm_last_error(void);

/**
 * Build a Neyman-Pearson problem on synthetic Gaussian data with an IID
 * partition.
 *
 * # Safety
 * `params` must point to a valid struct and `out` to writable storage.
 */
enum FedsgmStatus fedsgm_problem_np_synthetic(const struct FedsgmSyntheticParams *params,
                                              struct FedsgmProblem **out);

/**
 * Build the linear-objective, ball-constraint benchmark.
 *
 * # Safety
 * `params` must be valid, its `direction` must hold `dim` doubles, and
 * `out` must be writable.
 */
enum FedsgmStatus fedsgm_problem_linear_ball(const struct FedsgmLinearBallParams *params,
                                             struct FedsgmProblem **out);

/**
 * # Safety
 * `problem` must come from a `fedsgm_problem_*` constructor, or be NULL.
 */
void fedsgm_problem_free(struct FedsgmProblem *problem);

/**
 * # Safety
 * `problem` must be a live handle and `out` writable.
 */
enum FedsgmStatus fedsgm_problem_info(const struct FedsgmProblem *problem,
                                      struct FedsgmProblemInfo *out);

/**
 * Simulate a run starting from the zero model.
 *
 * # Safety
 * `problem` and `config` must be valid and `out` writable.
 */
enum FedsgmStatus fedsgm_run(const struct FedsgmProblem *problem,
                             const struct FedsgmRunConfig *config,
                             struct FedsgmTrace **out);

/**
 * # Safety
 * `trace` must come from `fedsgm_run`, or be NULL.
 */
void fedsgm_trace_free(struct FedsgmTrace *trace);

/**
 * Number of recorded rounds, or 0 for a NULL handle.
 *
 * # Safety
 * `trace` must be a live handle or NULL.
 */
size_t fedsgm_trace_len(const struct FedsgmTrace *trace);

/**
 * # Safety
 * `trace` must be a live handle and `out` writable.
 */
enum FedsgmStatus fedsgm_trace_record(const struct FedsgmTrace *trace,
                                      size_t index,
                                      struct FedsgmRoundRecord *out);

/**
 * Copy the final model into `buf`, which must hold the problem dimension.
 *
 * # Safety
 * `trace` must be a live handle and `buf` must have room for `len` doubles.
 */
enum FedsgmStatus fedsgm_trace_final_model(const struct FedsgmTrace *trace,
                                           double *buf,
                                           size_t len);

/**
 * Write the trace in the CLI's `trace.csv` format.
 *
 * # Safety
 * `trace` must be a live handle and `path` a NUL-terminated string.
 */
enum FedsgmStatus fedsgm_trace_write_csv(const struct FedsgmTrace *trace, const char *path);

/**
 * Execute a TOML run file as `fedsgm run` would. `output_dir` may be NULL
 * to keep the directory named in the file.
 *
 * # Safety
 * `config_path` must be a NUL-terminated string; `output_dir` one or NULL.
 */
enum FedsgmStatus fedsgm_run_config_file(const char *config_path, const char *output_dir);

/**
 * Step size and threshold for the given horizon and compression levels.
 *
 * # Safety
 * `inputs` must be valid and `out` writable.
 */
enum FedsgmStatus fedsgm_theorem_params(const struct FedsgmTheoremInputs *inputs,
                                        struct FedsgmTheoremOutputs *out);

/**
 * Convergence constant with every client participating.
 */
double fedsgm_gamma_full(size_t local_steps, double q, double q0);

/**
 * Convergence constant with `participants` of `clients` sampled per round.
 */
double fedsgm_gamma_partial(size_t local_steps,
                            double q,
                            double q0,
                            size_t clients,
                            size_t participants);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FEDSGM_H */
