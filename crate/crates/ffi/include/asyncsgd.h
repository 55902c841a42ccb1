#ifndef ASYNCSGD_H
#define ASYNCSGD_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum AsgdStatus {
  ASGD_STATUS_OK = 0,
  ASGD_STATUS_NULL_POINTER = 1,
  ASGD_STATUS_INVALID_UTF8 = 2,
  ASGD_STATUS_INVALID_ARGUMENT = 3,
  ASGD_STATUS_INVALID_CONFIG = 4,
  ASGD_STATUS_NUMERIC_DOMAIN = 5,
  ASGD_STATUS_SIMULATION_ERROR = 6,
  ASGD_STATUS_IDENTITY_VIOLATION = 7,
  ASGD_STATUS_UNDEFINED_STATISTIC = 8,
  ASGD_STATUS_TUNING_FAILED = 9,
  ASGD_STATUS_SERIALIZATION = 10,
  ASGD_STATUS_IO = 11,
  ASGD_STATUS_INDEX_OUT_OF_RANGE = 12,
  ASGD_STATUS_PANIC = 13,
} AsgdStatus;

// How a simulation ended.
typedef enum AsgdRunStatus {
  ASGD_RUN_STATUS_COMPLETED = 0,
  ASGD_RUN_STATUS_CONVERGED = 1,
  ASGD_RUN_STATUS_NOT_CONVERGED = 2,
  ASGD_RUN_STATUS_DIVERGED = 3,
} AsgdRunStatus;

// Opaque objective handle.
typedef struct AsgdObjective AsgdObjective;

// Opaque handle to a finished simulation.
typedef struct AsgdTrace AsgdTrace;

// One applied gradient.
typedef struct AsgdRecord {
  uint64_t t;
  uint64_t worker;
  uint64_t client;
  uint64_t tau;
  double eta;
  double grad_norm;
  double f_value;
  double sim_time;
  uint64_t selected;
  uint64_t concurrency;
} AsgdRecord;

// Expected wall times of asynchronous and mini-batch SGD.
typedef struct AsgdSpeedup {
  double async_time;
  double minibatch_time;
  double ratio;
} AsgdSpeedup;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL after a successful
// call. The pointer stays valid until the next call into the library on the
// same thread; do not free it.
const char *asgd_last_error_message(void);

// Releases a string returned by the library. NULL is ignored.
//
// # Safety
// `s` must come from this library and not have been freed already.
void asgd_string_free(char *s);

// `f(x) = ½‖Ax − b‖²` with the spectrum of `A` equally spaced in
// `[lambda_min, lambda_max]`.
//
// # Safety
// `out` must be a valid pointer.
enum AsgdStatus asgd_objective_quadratic_new(size_t dim,
                                             double lambda_min,
                                             double lambda_max,
                                             uint64_t seed,
                                             struct AsgdObjective **out);

// Logistic regression over `m` synthetic samples in `dim` dimensions.
//
// # Safety
// `out` must be a valid pointer.
enum AsgdStatus asgd_objective_logistic_new(size_t m,
                                            size_t dim,
                                            uint64_t seed,
                                            struct AsgdObjective **out);

// Loads an objective from its JSON document.
//
// # Safety
// `json` must be a NUL-terminated string and `out` a valid pointer.
enum AsgdStatus asgd_objective_from_json(const char *json, struct AsgdObjective **out);

// Serialises an objective to JSON; free the result with [`asgd_string_free`].
//
// # Safety
// `obj` must be a live handle and `out` a valid pointer.
enum AsgdStatus asgd_objective_to_json(const struct AsgdObjective *obj, char **out);

// Dimension of the parameter space, 0 for a NULL handle.
//
// # Safety
// `obj` must be NULL or a live handle.
size_t asgd_objective_dim(const struct AsgdObjective *obj);

// Number of client functions (1 for homogeneous objectives), 0 for NULL.
//
// # Safety
// `obj` must be NULL or a live handle.
size_t asgd_objective_num_clients(const struct AsgdObjective *obj);

// Smoothness constant `L`, NaN for a NULL handle.
//
// # Safety
// `obj` must be NULL or a live handle.
double asgd_objective_smoothness(const struct AsgdObjective *obj);

// `f(x)`.
//
// # Safety
// `obj` must be a live handle, `x` must point to `len` doubles and `out` be valid.
enum AsgdStatus asgd_objective_value(const struct AsgdObjective *obj,
                                     const double *x,
                                     size_t len,
                                     double *out);

// `∇f(x)` written to `grad` (`len` doubles).
//
// # Safety
// `obj` must be a live handle; `x` and `grad` must each point to `len` doubles.
enum AsgdStatus asgd_objective_gradient(const struct AsgdObjective *obj,
                                        const double *x,
                                        size_t len,
                                        double *grad);

// Releases an objective. NULL is ignored.
//
// # Safety
// `obj` must come from this library and not have been freed already.
void asgd_objective_free(struct AsgdObjective *obj);

// Runs the experiment described by a JSON config (the schema of the
// `simulate` command). Relative paths in the config resolve against
// `base_dir`, or the working directory when it is NULL. A run that misses
// its accuracy target still succeeds; query [`asgd_trace_status`].
//
// # Safety
// `config_json` must be a NUL-terminated string, `base_dir` NULL or one, and
// `out` a valid pointer.
enum AsgdStatus asgd_simulate(const char *config_json,
                              const char *base_dir,
                              struct AsgdTrace **out);

// Number of applied gradients `T`, 0 for NULL.
//
// # Safety
// `trace` must be NULL or a live handle.
uint64_t asgd_trace_len(const struct AsgdTrace *trace);

// How the run ended.
//
// # Safety
// `trace` must be a live handle and `out` a valid pointer.
enum AsgdStatus asgd_trace_status(const struct AsgdTrace *trace, enum AsgdRunStatus *out);

// The record of iteration `index`.
//
// # Safety
// `trace` must be a live handle and `out` a valid pointer.
enum AsgdStatus asgd_trace_record(const struct AsgdTrace *trace,
                                  uint64_t index,
                                  struct AsgdRecord *out);

// Copies the final iterate into `x` (`len` must equal the dimension).
//
// # Safety
// `trace` must be a live handle and `x` must point to `len` doubles.
enum AsgdStatus asgd_trace_final_point(const struct AsgdTrace *trace, double *x, size_t len);

// The metrics document the `simulate` command writes.
//
// # Safety
// `trace` must be a live handle and `out` a valid pointer.
enum AsgdStatus asgd_trace_metrics_json(const struct AsgdTrace *trace, char **out);

// The per-iteration CSV the `simulate` command writes.
//
// # Safety
// `trace` must be a live handle and `out` a valid pointer.
enum AsgdStatus asgd_trace_csv(const struct AsgdTrace *trace, char **out);

// Releases a trace. NULL is ignored.
//
// # Safety
// `trace` must come from this library and not have been freed already.
void asgd_trace_free(struct AsgdTrace *trace);

// Expected time for `tau_c` gradients: asynchronous (mean of `deltas`) and
// mini-batch (expected maximum of `tau_c` uniform draws).
//
// # Safety
// `deltas` must point to `n` doubles and `out` be valid.
enum AsgdStatus asgd_speedup(const double *deltas,
                             size_t n,
                             uint32_t tau_c,
                             struct AsgdSpeedup *out);

// `min{ 1/(2L√(τ_max τ_C)), √(r₀ / (2Lσ²(T+1))) }`.
double asgd_theoretical_eta(double l,
                            uint64_t tau_max,
                            uint64_t tau_c,
                            double sigma,
                            double r0,
                            uint64_t horizon);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ASYNCSGD_H */
