#ifndef WEDGENET_H
#define WEDGENET_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum WnStatus {
  WN_STATUS_OK = 0,
  /**
   * The solver hit its iteration cap; the best iterate is still returned.
   */
  WN_STATUS_NON_CONVERGED = 1,
  WN_STATUS_INVALID_ARGUMENT = 2,
  WN_STATUS_NULL_POINTER = 3,
  WN_STATUS_DIMENSION = 4,
  WN_STATUS_DEGENERATE_FEATURE = 5,
  WN_STATUS_STATE = 6,
  WN_STATUS_VARIANT = 7,
  WN_STATUS_RANK = 8,
  WN_STATUS_SIZE = 9,
  WN_STATUS_NUMERICAL = 10,
  WN_STATUS_PROVENANCE = 11,
  WN_STATUS_DATA = 12,
  WN_STATUS_IO = 13,
  WN_STATUS_PANIC = 14,
} WnStatus;

/**
 * Loss selector for [`wn_solve`] and [`wn_network_cost`].
 */
typedef enum WnLoss {
  WN_LOSS_SQUARED = 0,
  WN_LOSS_LOGISTIC = 1,
} WnLoss;

/**
 * Samples and labels.
 */
typedef struct WnDataset WnDataset;

/**
 * Feature dictionary together with the data its descriptors index into.
 */
typedef struct WnDictionary WnDictionary;

/**
 * Feed-forward ReLU network.
 */
typedef struct WnNetwork WnNetwork;

/**
 * Solution of the penalized convex program.
 */
typedef struct WnSolution WnSolution;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer
 * stays valid until the next library call on the same thread.
 */
const char *wn_last_error(void);

/**
 * Releases a string returned by the library.
 *
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void wn_string_free(char *s);

/**
 * Signed volume of the `d × d` row-major matrix `rows`.
 *
 * # Safety
 * `rows` must hold `d * d` doubles and `out` must be writable.
 */
enum WnStatus wn_signed_volume(const double *rows, size_t d, double *out);

/**
 * Generalized cross product of the `d − 1` row-major vectors in `rows`;
 * writes `d` doubles to `out`.
 *
 * # Safety
 * `rows` must hold `(d - 1) * d` doubles and `out` must hold `d`.
 */
enum WnStatus wn_cross(const double *rows, size_t d, double *out);

/**
 * Positive part of the signed distance from `x` to the span of the `k`
 * row-major vectors in `basis` (`k = d - 1`).
 *
 * # Safety
 * `x` must hold `d` doubles, `basis` `k * d`, `out` one.
 */
enum WnStatus wn_dist_plus_to_span(const double *x,
                                   const double *basis,
                                   size_t k,
                                   size_t d,
                                   double *out);

/**
 * Positive part of the signed distance from `x` to the affine hull of the
 * `k` row-major points in `points` (`k = d`).
 *
 * # Safety
 * `x` must hold `d` doubles, `points` `k * d`, `out` one.
 */
enum WnStatus wn_dist_plus_to_affine(const double *x,
                                     const double *points,
                                     size_t k,
                                     size_t d,
                                     double *out);

/**
 * Dataset from an `n × d` sample matrix and `n × c` label matrix.
 *
 * # Safety
 * `x` must hold `n * d` doubles, `y` `n * c`; `out` must be writable.
 */
enum WnStatus wn_dataset_new(const double *x,
                             size_t n,
                             size_t d,
                             const double *y,
                             size_t c,
                             struct WnDataset **out);

/**
 * Reads a CSV with a header row; the last `label_cols` columns are labels.
 *
 * # Safety
 * `path` must be a nul-terminated string; `out` must be writable.
 */
enum WnStatus wn_dataset_read_csv(const char *path, size_t label_cols, struct WnDataset **out);

/**
 * Writes the sample count, input dimension and label count.
 *
 * # Safety
 * `ds` must be a live dataset; the out pointers may be NULL.
 */
enum WnStatus wn_dataset_shape(const struct WnDataset *ds, size_t *n, size_t *d, size_t *c);

/**
 * # Safety
 * `ds` must be NULL or a dataset not yet freed.
 */
void wn_dataset_free(struct WnDataset *ds);

/**
 * Builds a feature dictionary. `variant` takes the command-line names
 * (`1d`, `l1-nobias`, `l2-nobias`, `l2-bias`, `2d-l1-bias`, `2d-l2-bias`,
 * `3layer-l1-nobias`, `3layer-l1-bias`, `vector`); `p` is 1 or 2 and only
 * matters for `vector` (0 picks the variant's default).
 *
 * # Safety
 * `ds` must be a live dataset, `variant` a nul-terminated string and `out`
 * writable.
 */
enum WnStatus wn_dictionary_build(const struct WnDataset *ds,
                                  const char *variant,
                                  uint8_t p,
                                  size_t max_features,
                                  uint64_t seed,
                                  struct WnDictionary **out);

/**
 * Writes the row count and the number of features (columns).
 *
 * # Safety
 * `dict` must be a live dictionary; the out pointers may be NULL.
 */
enum WnStatus wn_dictionary_shape(const struct WnDictionary *dict, size_t *n, size_t *features);

/**
 * # Safety
 * `dict` must be NULL or a dictionary not yet freed.
 */
void wn_dictionary_free(struct WnDictionary *dict);

/**
 * Solves the penalized program for the dictionary against the dataset's
 * labels. On `NonConverged` the best iterate is still stored in `out`.
 *
 * # Safety
 * Handles must be live and `out` writable.
 */
enum WnStatus wn_solve(const struct WnDictionary *dict,
                       const struct WnDataset *ds,
                       double lambda,
                       enum WnLoss loss,
                       size_t max_iter,
                       struct WnSolution **out);

/**
 * # Safety
 * `sol` must be live and `out` writable.
 */
enum WnStatus wn_solution_objective(const struct WnSolution *sol, double *out);

/**
 * Solution as JSON; release with [`wn_string_free`].
 *
 * # Safety
 * `sol` must be live and `out` writable.
 */
enum WnStatus wn_solution_to_json(const struct WnSolution *sol, char **out);

/**
 * # Safety
 * `sol` must be NULL or a solution not yet freed.
 */
void wn_solution_free(struct WnSolution *sol);

/**
 * Network realizing the solution, with balanced per-neuron scaling.
 *
 * # Safety
 * Handles must be live and `out` writable.
 */
enum WnStatus wn_network_reconstruct(const struct WnDictionary *dict,
                                     const struct WnSolution *sol,
                                     struct WnNetwork **out);

/**
 * Parses a network from its JSON form.
 *
 * # Safety
 * `json` must be a nul-terminated string and `out` writable.
 */
enum WnStatus wn_network_from_json(const char *json, struct WnNetwork **out);

/**
 * Network as JSON; release with [`wn_string_free`].
 *
 * # Safety
 * `net` must be live and `out` writable.
 */
enum WnStatus wn_network_to_json(const struct WnNetwork *net, char **out);

/**
 * Writes the input and output dimensions.
 *
 * # Safety
 * `net` must be live; the out pointers may be NULL.
 */
enum WnStatus wn_network_dims(const struct WnNetwork *net, size_t *inputs, size_t *outputs);

/**
 * Evaluates the network on `n` row-major inputs of dimension `d`, writing
 * `n × outputs` row-major values to `out`.
 *
 * # Safety
 * `x` must hold `n * d` doubles and `out` `out_len` doubles.
 */
enum WnStatus wn_network_forward(const struct WnNetwork *net,
                                 const double *x,
                                 size_t n,
                                 size_t d,
                                 double *out,
                                 size_t out_len);

/**
 * Training objective `loss + λ·reg` of the network on the dataset.
 *
 * # Safety
 * Handles must be live and `out` writable.
 */
enum WnStatus wn_network_cost(const struct WnNetwork *net,
                              const struct WnDataset *ds,
                              double lambda,
                              uint8_t p,
                              enum WnLoss loss,
                              double *out);

/**
 * # Safety
 * `net` must be NULL or a network not yet freed.
 */
void wn_network_free(struct WnNetwork *net);

/**
 * Polishes every hidden layer against the dataset (biases included, ridge
 * refit of the following layer at `lambda`). `report` receives the JSON
 * report when non-NULL; release it with [`wn_string_free`].
 *
 * # Safety
 * Handles must be live; `out` must be writable.
 */
enum WnStatus wn_polish(const struct WnNetwork *net,
                        const struct WnDataset *ds,
                        double lambda,
                        uint8_t p,
                        struct WnNetwork **out,
                        char **report);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* WEDGENET_H */
