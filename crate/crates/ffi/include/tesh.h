#ifndef TESH_H
#define TESH_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum TeshStatus {
  TESH_STATUS_OK = 0,
  TESH_STATUS_NULL_POINTER = 1,
  TESH_STATUS_INVALID_UTF8 = 2,
  TESH_STATUS_INVALID_ARGUMENT = 3,
  TESH_STATUS_IO = 4,
  TESH_STATUS_PARSE = 5,
  TESH_STATUS_CHECKPOINT = 6,
  TESH_STATUS_UNKNOWN_NODE = 7,
  TESH_STATUS_NUMERIC = 8,
  TESH_STATUS_BUFFER_TOO_SMALL = 9,
  TESH_STATUS_PANIC = 10,
} TeshStatus;

/**
 * A checkpoint bound to its dataset.
 */
typedef struct TeshSession TeshSession;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *tesh_version(void);

/**
 * Message of the last failed call on this thread, or NULL. The pointer
 * stays valid until the next call into the library on the same thread.
 */
const char *tesh_last_error(void);

/**
 * Releases a string returned by this library. NULL is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void tesh_string_free(char *s);

/**
 * Opens a checkpoint. `data` may be NULL to use the dataset directory
 * recorded in the checkpoint.
 *
 * # Safety
 * `ckpt` and a non-NULL `data` must be NUL-terminated strings; `out` must
 * be writable.
 */
enum TeshStatus tesh_session_open(const char *ckpt, const char *data, struct TeshSession **out);

/**
 * Releases a session. NULL is ignored.
 *
 * # Safety
 * `s` must come from `tesh_session_open` and not have been freed.
 */
void tesh_session_free(struct TeshSession *s);

/**
 * Number of nodes in the session's graph, or 0 for NULL.
 *
 * # Safety
 * `s` must be NULL or a live session.
 */
size_t tesh_session_num_nodes(const struct TeshSession *s);

/**
 * Number of edge types scored per pair, or 0 for NULL.
 *
 * # Safety
 * `s` must be NULL or a live session.
 */
size_t tesh_session_num_edge_types(const struct TeshSession *s);

/**
 * Name of edge type `k` as a new string.
 *
 * # Safety
 * `s` must be a live session and `out` writable.
 */
enum TeshStatus tesh_session_edge_type(const struct TeshSession *s, size_t k, char **out);

/**
 * Scores the ordered pair `(i, j)` of node indices. Writes the link
 * probability to `z_prob` and one score per edge type to `y`, which must
 * hold `y_len >= tesh_session_num_edge_types(s)` values.
 *
 * # Safety
 * `s` must be a live session, `z_prob` writable, and `y` valid for
 * `y_len` writes.
 */
enum TeshStatus tesh_session_predict(const struct TeshSession *s,
                                     size_t i,
                                     size_t j,
                                     double *z_prob,
                                     double *y,
                                     size_t y_len);

/**
 * Prediction for a pair of node ids (or indices) as a JSON string.
 *
 * # Safety
 * `s` must be a live session, `i` and `j` NUL-terminated strings, and
 * `out` writable.
 */
enum TeshStatus tesh_session_predict_json(const struct TeshSession *s,
                                          const char *i,
                                          const char *j,
                                          char **out);

/**
 * Metapath trace for a pair of node ids (or indices), keeping `top`
 * cells per layer, as a JSON string.
 *
 * # Safety
 * As for `tesh_session_predict_json`.
 */
enum TeshStatus tesh_session_explain_json(const struct TeshSession *s,
                                          const char *i,
                                          const char *j,
                                          size_t top,
                                          char **out);

/**
 * Evaluation report on `"val"` or `"test"` as a JSON string.
 *
 * # Safety
 * `s` must be a live session, `split` a NUL-terminated string, and `out`
 * writable.
 */
enum TeshStatus tesh_session_evaluate_json(const struct TeshSession *s,
                                           const char *split,
                                           char **out);

/**
 * Graph statistics of an ingested dataset directory as a JSON string.
 *
 * # Safety
 * `data` must be a NUL-terminated string and `out` writable.
 */
enum TeshStatus tesh_metrics_json(const char *data, uint64_t samples, uint64_t seed, char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TESH_H */
