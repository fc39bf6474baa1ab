#ifndef EMBEDPLAN_H
#define EMBEDPLAN_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum EpStatus {
  EP_STATUS_OK = 0,
  EP_STATUS_NULL_POINTER = 1,
  EP_STATUS_INVALID_ARGUMENT = 2,
  EP_STATUS_IO = 3,
  EP_STATUS_FORMAT = 4,
  EP_STATUS_NOT_FOUND = 5,
  EP_STATUS_DIMENSION_MISMATCH = 6,
  EP_STATUS_BUFFER_TOO_SMALL = 7,
  EP_STATUS_INTERNAL = 8,
} EpStatus;

/**
 * The builtin hashed n-gram encoder.
 */
typedef struct EpEncoder EpEncoder;

/**
 * A trained transition model loaded from a checkpoint.
 */
typedef struct EpModel EpModel;

/**
 * An embedding table keyed by string id.
 */
typedef struct EpTable EpTable;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *ep_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ep_version(void);

/**
 * Creates an empty table of dimension `dim`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum EpStatus ep_table_new(size_t dim, struct EpTable **out);

/**
 * Loads an EMBT file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum EpStatus ep_table_load(const char *path, struct EpTable **out);

/**
 * Writes the table as an EMBT file.
 *
 * # Safety
 * `table` must come from this library; `path` must be NUL-terminated.
 */
enum EpStatus ep_table_save(const struct EpTable *table, const char *path);

/**
 * Returns 0 for a null handle.
 *
 * # Safety
 * `table` must be null or come from this library.
 */
size_t ep_table_dim(const struct EpTable *table);

/**
 * Returns 0 for a null handle.
 *
 * # Safety
 * `table` must be null or come from this library.
 */
size_t ep_table_len(const struct EpTable *table);

/**
 * Inserts a vector of length `len`; it is L2-normalized on insert.
 *
 * # Safety
 * `table` must come from this library, `id` must be NUL-terminated and
 * `vec` must point to `len` floats.
 */
enum EpStatus ep_table_insert(struct EpTable *table, const char *id, const float *vec, size_t len);

/**
 * Copies the vector for `id` into `out` (capacity `len`, at least the
 * table dimension).
 *
 * # Safety
 * `table` must come from this library, `id` must be NUL-terminated and
 * `out` must point to `len` writable floats.
 */
enum EpStatus ep_table_get(const struct EpTable *table, const char *id, float *out, size_t len);

/**
 * # Safety
 * `table` must be null or come from this library, and not be used again.
 */
void ep_table_free(struct EpTable *table);

/**
 * Builtin encoder with the default n-gram settings and the given output
 * dimension and projection seed.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum EpStatus ep_encoder_new(size_t dim, uint64_t seed, struct EpEncoder **out);

/**
 * Encodes `text` into `out` (capacity `len`, at least the encoder
 * dimension). The result is unit norm.
 *
 * # Safety
 * `enc` must come from this library, `text` must be NUL-terminated and
 * `out` must point to `len` writable floats.
 */
enum EpStatus ep_encoder_encode(const struct EpEncoder *enc,
                                const char *text,
                                float *out,
                                size_t len);

/**
 * # Safety
 * `enc` must be null or come from this library.
 */
size_t ep_encoder_dim(const struct EpEncoder *enc);

/**
 * # Safety
 * `enc` must be null or come from this library, and not be used again.
 */
void ep_encoder_free(struct EpEncoder *enc);

/**
 * Loads a model checkpoint.
 *
 * # Safety
 * `path` must be NUL-terminated and `out` a valid pointer.
 */
enum EpStatus ep_model_load(const char *path, struct EpModel **out);

/**
 * Total trainable parameters, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or come from this library.
 */
size_t ep_model_param_count(const struct EpModel *model);

/**
 * Length of the vector written by `ep_model_predict`.
 */
size_t ep_latent_dim(void);

/**
 * Predicts the next-state latent for one `(state, action)` embedding pair
 * and writes it to `out` (capacity `out_len` ≥ `ep_latent_dim()`).
 *
 * # Safety
 * `model` must come from this library; the input pointers must reference
 * `zs_len` and `za_len` floats and `out` must point to `out_len` doubles.
 */
enum EpStatus ep_model_predict(const struct EpModel *model,
                               const float *zs,
                               size_t zs_len,
                               const float *za,
                               size_t za_len,
                               double *out,
                               size_t out_len);

/**
 * # Safety
 * `model` must be null or come from this library, and not be used again.
 */
void ep_model_free(struct EpModel *model);

/**
 * Paired t-test of `a` against `b` (length `n`). Writes the t statistic,
 * two-sided p-value and Cohen's d; any output pointer may be null.
 *
 * # Safety
 * `a` and `b` must point to `n` doubles each.
 */
enum EpStatus ep_stats_paired_t(const double *a,
                                const double *b,
                                size_t n,
                                double *t,
                                double *p,
                                double *d);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EMBEDPLAN_H */
