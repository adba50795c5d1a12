/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#ifndef PLAB_H
#define PLAB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PlabStatus {
  PLAB_STATUS_OK = 0,
  PLAB_STATUS_NULL_POINTER = 1,
  PLAB_STATUS_INVALID_ARGUMENT = 2,
  PLAB_STATUS_DEGENERATE_DATA = 3,
  PLAB_STATUS_UNSUPPORTED = 4,
  PLAB_STATUS_DIVERGENCE = 5,
  PLAB_STATUS_DEGENERATE_RECURSION = 6,
  PLAB_STATUS_INSUFFICIENT_MARGIN = 7,
  PLAB_STATUS_INVALID_INITIALIZATION = 8,
  PLAB_STATUS_DEGENERATE_BETWEEN_CLASS = 9,
  PLAB_STATUS_BUFFER_TOO_SMALL = 10,
  PLAB_STATUS_CONFIG = 11,
  PLAB_STATUS_IO = 12,
  PLAB_STATUS_INTERNAL = 13,
} PlabStatus;

typedef enum PlabActivation {
  PLAB_ACTIVATION_LINEAR = 0,
  PLAB_ACTIVATION_RELU = 1,
} PlabActivation;

typedef enum PlabCase {
  PLAB_CASE_LOW_RANK = 0,
  PLAB_CASE_WIDE = 1,
} PlabCase;

// Opaque dense matrix.
typedef struct PlabMatrix PlabMatrix;

// Opaque feed-forward network.
typedef struct PlabNetwork PlabNetwork;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL. The pointer stays
// valid until the next failing call on the same thread.
const char *plab_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *plab_version(void);

// Creates a `rows × cols` matrix from a row-major buffer of `rows * cols`
// values, or zeros when `data` is NULL.
//
// # Safety
// `data` must be NULL or point to `rows * cols` doubles; `out` must be writable.
enum PlabStatus plab_matrix_new(size_t rows,
                                size_t cols,
                                const double *data,
                                struct PlabMatrix **out);

// # Safety
// `m` must be NULL or a handle from this library not yet freed.
void plab_matrix_free(struct PlabMatrix *m);

// # Safety
// `m` must be a live handle or NULL (which yields 0).
size_t plab_matrix_rows(const struct PlabMatrix *m);

// # Safety
// `m` must be a live handle or NULL (which yields 0).
size_t plab_matrix_cols(const struct PlabMatrix *m);

// Copies the entries row-major into `buf`, which must hold `rows * cols`.
//
// # Safety
// `m` must be a live handle and `buf` must have room for `len` doubles.
enum PlabStatus plab_matrix_copy_data(const struct PlabMatrix *m, double *buf, size_t len);

// `ε`-scaled random orthogonal matrix (`WᵀW = ε²I` when tall, `WWᵀ = ε²I`
// when wide).
//
// # Safety
// `out` must be writable.
enum PlabStatus plab_random_orthogonal(size_t rows,
                                       size_t cols,
                                       double eps,
                                       uint64_t seed,
                                       struct PlabMatrix **out);

// Writes the singular values in descending order; `buf` must hold
// `min(rows, cols)` values.
//
// # Safety
// `m` must be a live handle and `buf` must have room for `len` doubles.
enum PlabStatus plab_singular_values(const struct PlabMatrix *m, double *buf, size_t len);

// Projector distance `‖AAᵀ − BBᵀ‖_F` between the spans of two orthonormal
// bases.
//
// # Safety
// `a`, `b` must be live handles and `out` writable.
enum PlabStatus plab_subspace_distance(const struct PlabMatrix *a,
                                       const struct PlabMatrix *b,
                                       double *out);

// Network with widths `dims[0..n_dims]` (input first) and ε-orthogonal layers.
//
// # Safety
// `dims` must point to `n_dims` values and `out` must be writable.
enum PlabStatus plab_network_orthogonal(const size_t *dims,
                                        size_t n_dims,
                                        double eps,
                                        enum PlabActivation act,
                                        uint64_t seed,
                                        struct PlabNetwork **out);

// # Safety
// `net` must be NULL or a handle from this library not yet freed.
void plab_network_free(struct PlabNetwork *net);

// Number of layers, or 0 for NULL.
//
// # Safety
// `net` must be a live handle or NULL.
size_t plab_network_depth(const struct PlabNetwork *net);

// Copy of layer `l` (1-indexed).
//
// # Safety
// `net` must be a live handle and `out` writable.
enum PlabStatus plab_network_layer(const struct PlabNetwork *net,
                                   size_t l,
                                   struct PlabMatrix **out);

// End-to-end product `W_L ⋯ W_1` of a linear network.
//
// # Safety
// `net` must be a live handle and `out` writable.
enum PlabStatus plab_network_end_to_end(const struct PlabNetwork *net, struct PlabMatrix **out);

// `½‖f(X) − Y‖_F²` with samples as columns of `x` and `y`.
//
// # Safety
// All handles must be live and `out` writable.
enum PlabStatus plab_network_loss(const struct PlabNetwork *net,
                                  const struct PlabMatrix *x,
                                  const struct PlabMatrix *y,
                                  double *out);

// Full-batch GD on `½‖f(X) − Y‖_F²`. Writes the final network, its loss, and
// the iteration at which the loss reached `loss_tol` (or -1).
//
// # Safety
// All handles must be live and the three outputs writable.
enum PlabStatus plab_network_train(const struct PlabNetwork *net,
                                   const struct PlabMatrix *x,
                                   const struct PlabMatrix *y,
                                   double eta,
                                   double lambda,
                                   double mu,
                                   size_t max_iters,
                                   double loss_tol,
                                   struct PlabNetwork **out,
                                   double *final_loss,
                                   int64_t *converged_at);

// Predicted trailing singular values `ρ(0..=steps)`; `buf` must hold
// `steps + 1` values.
//
// # Safety
// `buf` must have room for `len` doubles.
enum PlabStatus plab_rho_sequence(enum PlabCase case_,
                                  double eps,
                                  double eta,
                                  double lambda,
                                  size_t depth,
                                  double mu,
                                  size_t steps,
                                  double *buf,
                                  size_t len);

// `Tr Σ_W / Tr Σ_B` of the columns of `features` grouped by `labels`
// (`n_labels` must equal the column count).
//
// # Safety
// `features` must be live, `labels` must point to `n_labels` values and
// `out` must be writable.
enum PlabStatus plab_separation_measure(const struct PlabMatrix *features,
                                        const size_t *labels,
                                        size_t n_labels,
                                        double *out);

// Runs the experiment config at `config_path`, writing artifacts into
// `out_dir`. `passed` receives whether every check held.
//
// # Safety
// Both strings must be NUL-terminated UTF-8 and `passed` writable.
enum PlabStatus plab_run_experiment(const char *config_path, const char *out_dir, bool *passed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PLAB_H */
