#ifndef G5_H
#define G5_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum G5Status {
  G5_STATUS_OK = 0,
  G5_STATUS_NULL_POINTER = 1,
  G5_STATUS_INVALID_ARGUMENT = 2,
  G5_STATUS_SHAPE = 3,
  G5_STATUS_NUMERIC = 4,
  G5_STATUS_CONTRACT = 5,
  G5_STATUS_CONFIG = 6,
  G5_STATUS_PARSE = 7,
  G5_STATUS_IO = 8,
  G5_STATUS_INTEGRITY = 9,
  G5_STATUS_VERSION = 10,
  G5_STATUS_LABEL_ACCESS = 11,
  G5_STATUS_PIPELINE_ORDER = 12,
  G5_STATUS_PANIC = 13,
  G5_STATUS_OTHER = 14,
} G5Status;

/**
 * A checkpoint opened read-only.
 */
typedef struct G5Checkpoint G5Checkpoint;

/**
 * A loaded graph, optionally with its preprocessed subgraphs.
 */
typedef struct G5Dataset G5Dataset;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The pointer is
 * valid until the next call into this library from the same thread.
 */
const char *g5_last_error_message(void);

/**
 * Load a graph from `<content>` and `<cites>` files into `*out`.
 *
 * # Safety
 * All pointers must be valid; strings must be NUL-terminated.
 */
enum G5Status g5_dataset_load(const char *content_path,
                              const char *cites_path,
                              const char *graph_id,
                              struct G5Dataset **out);

/**
 * # Safety
 * `ds` must come from [`g5_dataset_load`] and not be freed twice; null is ignored.
 */
void g5_dataset_free(struct G5Dataset *ds);

/**
 * Node, edge, feature and class counts. Any output pointer may be null.
 *
 * # Safety
 * `ds` must be a live handle.
 */
enum G5Status g5_dataset_counts(const struct G5Dataset *ds,
                                size_t *nodes,
                                size_t *edges,
                                size_t *features,
                                size_t *classes);

/**
 * Compute intimacy contexts of size `k`, WL codes and hop distances with
 * default settings.
 *
 * # Safety
 * `ds` must be a live handle.
 */
enum G5Status g5_dataset_preprocess(struct G5Dataset *ds, size_t k);

/**
 * Copy the context of `node` (most intimate first, target excluded) into
 * `ids`, writing at most `capacity` entries; `*written` receives the full
 * context length.
 *
 * # Safety
 * `ds` must be a live handle; `ids` must hold `capacity` entries (may be
 * null when `capacity` is 0).
 */
enum G5Status g5_dataset_context(const struct G5Dataset *ds,
                                 size_t node,
                                 size_t *ids,
                                 size_t capacity,
                                 size_t *written);

/**
 * # Safety
 * `path` must be NUL-terminated and `out` valid.
 */
enum G5Status g5_checkpoint_load(const char *path, struct G5Checkpoint **out);

/**
 * # Safety
 * `ck` must come from [`g5_checkpoint_load`]; null is ignored.
 */
void g5_checkpoint_free(struct G5Checkpoint *ck);

/**
 * Scalar parameter count, portal size and number of registered graphs.
 * Any output pointer may be null.
 *
 * # Safety
 * `ck` must be a live handle.
 */
enum G5Status g5_checkpoint_info(const struct G5Checkpoint *ck,
                                 size_t *params,
                                 size_t *universal_k,
                                 size_t *graphs);

/**
 * Route `sources` vectors of length `dim` (row-major in `u`) for
 * `iterations` rounds. Writes the output vector to `v` (length `dim`) and,
 * when `couplings` is non-null, the final couplings (length `sources`).
 *
 * # Safety
 * `u` must hold `sources * dim` values, `v` `dim` values and `couplings`
 * (if given) `sources` values.
 */
enum G5Status g5_cdr_route(const double *u,
                           size_t sources,
                           size_t dim,
                           size_t iterations,
                           double *v,
                           double *couplings);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* G5_H */
