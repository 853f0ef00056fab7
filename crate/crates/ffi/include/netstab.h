/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#ifndef NETSTAB_H
#define NETSTAB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum NetstabStatus {
  NETSTAB_STATUS_OK = 0,
  NETSTAB_STATUS_NULL_POINTER = 1,
  NETSTAB_STATUS_INVALID_INPUT = 2,
  NETSTAB_STATUS_DIMENSION = 3,
  NETSTAB_STATUS_CYCLIC = 4,
  NETSTAB_STATUS_INFEASIBLE = 5,
  NETSTAB_STATUS_NUMERICAL = 6,
  NETSTAB_STATUS_IO = 7,
  NETSTAB_STATUS_PANIC = 8,
} NetstabStatus;

/**
 * Saturated feedback law.
 */
typedef struct NetstabController NetstabController;

/**
 * Network, diagrams and junction bookkeeping.
 */
typedef struct NetstabModel NetstabModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Creates the built-in eight-cell freeway model.
 *
 * # Safety
 * `out` must be a writable pointer.
 */
enum NetstabStatus netstab_model_freeway(struct NetstabModel **out);

/**
 * Creates a model from network and diagram JSON documents.
 *
 * # Safety
 * Both strings must be NUL-terminated; `out` must be writable.
 */
enum NetstabStatus netstab_model_from_json(const char *network_json,
                                           const char *diagrams_json,
                                           struct NetstabModel **out);

/**
 * Releases a model; NULL is ignored.
 *
 * # Safety
 * `model` must be NULL or a handle not yet freed.
 */
void netstab_model_free(struct NetstabModel *model);

/**
 * Number of cells, or 0 for NULL.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
size_t netstab_model_cell_count(const struct NetstabModel *model);

/**
 * Length of the disturbance vector, or 0 for NULL.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
size_t netstab_model_disturbance_dim(const struct NetstabModel *model);

/**
 * One step of the network: writes `x+` into `x_next`.
 *
 * # Safety
 * `x`, `v` and `x_next` must hold `n` elements, `d` must hold `d_len`.
 */
enum NetstabStatus netstab_step(const struct NetstabModel *model,
                                const double *x,
                                const double *v,
                                size_t n,
                                const double *d,
                                size_t d_len,
                                double *x_next);

/**
 * Solves for the uncongested equilibrium of inflow `vstar`; writes the
 * densities into `xstar` and the flows into `flows` (may be NULL).
 *
 * # Safety
 * `vstar` and `xstar` must hold `n` elements, `flows` NULL or `n`.
 */
enum NetstabStatus netstab_solve_uep(const struct NetstabModel *model,
                                     const double *vstar,
                                     size_t n,
                                     double *xstar,
                                     double *flows);

/**
 * Creates a controller from explicit parameters; `k` is row-major `n x n`.
 *
 * # Safety
 * `xstar`, `vstar`, `b` must hold `n` elements, `k` must hold `n * n`.
 */
enum NetstabStatus netstab_controller_new(const double *xstar,
                                          const double *vstar,
                                          const double *b,
                                          const double *k,
                                          size_t n,
                                          double tau,
                                          struct NetstabController **out);

/**
 * The ramp-metering controller of the built-in freeway experiment.
 *
 * # Safety
 * `out` must be writable.
 */
enum NetstabStatus netstab_controller_experiment(struct NetstabController **out);

/**
 * Derives the controller guaranteed by the certificate for inflow `vstar`.
 *
 * # Safety
 * `vstar` must hold `n` elements; `out` must be writable.
 */
enum NetstabStatus netstab_controller_synthesize(const struct NetstabModel *model,
                                                 const double *vstar,
                                                 size_t n,
                                                 double tau,
                                                 struct NetstabController **out);

/**
 * Releases a controller; NULL is ignored.
 *
 * # Safety
 * `controller` must be NULL or a handle not yet freed.
 */
void netstab_controller_free(struct NetstabController *controller);

/**
 * Evaluates the feedback law at `x`, writing the inflow into `v`.
 *
 * # Safety
 * `x` and `v` must hold `n` elements.
 */
enum NetstabStatus netstab_control_law(const struct NetstabController *controller,
                                       const double *x,
                                       size_t n,
                                       double *v);

/**
 * Computes the stability certificate as a JSON string written to
 * `out_json`; release it with [`netstab_string_free`]. `controller` may be
 * NULL to synthesize one. `*passed` (if non-NULL) receives the verdict.
 *
 * # Safety
 * `vstar` must hold `n` elements; `out_json` must be writable.
 */
enum NetstabStatus netstab_analyze_json(const struct NetstabModel *model,
                                        const double *vstar,
                                        size_t n,
                                        const struct NetstabController *controller,
                                        uint64_t seed,
                                        bool *passed,
                                        char **out_json);

/**
 * Releases a string returned by this library; NULL is ignored.
 *
 * # Safety
 * `s` must be NULL or a string from this library not yet freed.
 */
void netstab_string_free(char *s);

/**
 * Message of the last failed call on this thread, or NULL after a success.
 * The pointer stays valid until the next call into this library on the
 * same thread.
 */
const char *netstab_last_error_message(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NETSTAB_H */
