#ifndef OOVTAG_H
#define OOVTAG_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes. Zero is success.
 */
typedef enum OovtagStatus {
  OOVTAG_STATUS_OK = 0,
  OOVTAG_STATUS_NULL_ARGUMENT = 1,
  OOVTAG_STATUS_INVALID_UTF8 = 2,
  OOVTAG_STATUS_IO = 3,
  OOVTAG_STATUS_CORRUPT_CHECKPOINT = 4,
  OOVTAG_STATUS_VERSION_MISMATCH = 5,
  /**
   * Malformed or inconsistent input data.
   */
  OOVTAG_STATUS_DATA = 6,
  /**
   * Settings that do not fit together, such as a table of the wrong width.
   */
  OOVTAG_STATUS_CONFIG = 7,
  OOVTAG_STATUS_INDEX_OUT_OF_RANGE = 8,
  /**
   * The output buffer is too small; the required size was reported.
   */
  OOVTAG_STATUS_BUFFER_TOO_SMALL = 9,
  /**
   * An internal error was caught at the boundary.
   */
  OOVTAG_STATUS_PANIC = 10,
} OovtagStatus;

/**
 * OOV handling codes accepted by [`oovtag_tag_sentence`].
 */
typedef enum OovtagStrategy {
  OOVTAG_STRATEGY_PREDICTOR = 0,
  OOVTAG_STRATEGY_RANDOM = 1,
  OOVTAG_STRATEGY_UNK_TOKEN = 2,
} OovtagStrategy;

/**
 * Opaque model handle.
 */
typedef struct OovtagModel OovtagModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Loads a checkpoint and the embedding table it was trained with.
 *
 * # Safety
 * `checkpoint_path` and `embeddings_path` are NUL-terminated strings and
 * `out` is a valid pointer. On success `*out` owns a handle to be released
 * with [`oovtag_model_free`]; on failure it is set to NULL.
 */
enum OovtagStatus oovtag_model_load(const char *checkpoint_path,
                                    const char *embeddings_path,
                                    struct OovtagModel **out);

/**
 * Releases a handle. NULL is ignored.
 *
 * # Safety
 * `model` is NULL or a handle from [`oovtag_model_load`] not yet freed.
 */
void oovtag_model_free(struct OovtagModel *model);

/**
 * Width of the word vectors the model consumes and predicts; 0 for NULL.
 *
 * # Safety
 * `model` is NULL or a live handle.
 */
size_t oovtag_model_word_dim(const struct OovtagModel *model);

/**
 * Tags `n` words, routing OOV words by the `OovtagStrategy` code
 * `strategy`. The result is written to `out` as one `UPOS\tFEATS` line
 * per word, NUL-terminated. `*written` receives the byte count including
 * the terminator, or the size needed when the buffer is too small.
 *
 * # Safety
 * `model` is a live handle, `words` points to `n` NUL-terminated strings,
 * `out` points to `out_len` writable bytes (may be NULL when `out_len` is
 * 0) and `written` is NULL or valid.
 */
enum OovtagStatus oovtag_tag_sentence(const struct OovtagModel *model,
                                      const char *const *words,
                                      size_t n,
                                      int32_t strategy,
                                      char *out,
                                      size_t out_len,
                                      size_t *written);

/**
 * Predicts the embedding of `words[target]` from its characters and the
 * other words, writing `oovtag_model_word_dim` values to `out`. The target
 * is routed through the predictor even when the table has a row for it.
 *
 * # Safety
 * `model` is a live handle, `words` points to `n` NUL-terminated strings
 * and `out` points to `out_len` writable doubles.
 */
enum OovtagStatus oovtag_predict_embedding(const struct OovtagModel *model,
                                           const char *const *words,
                                           size_t n,
                                           size_t target,
                                           double *out,
                                           size_t out_len);

/**
 * Message for the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *oovtag_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *oovtag_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OOVTAG_H */
