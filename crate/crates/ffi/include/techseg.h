#ifndef TECHSEG_H
#define TECHSEG_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum TsStatus {
  TS_STATUS_OK = 0,
  /**
   * A required pointer argument was NULL.
   */
  TS_STATUS_NULL_ARGUMENT = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  TS_STATUS_INVALID_UTF8 = 2,
  /**
   * A file could not be opened, read or written.
   */
  TS_STATUS_IO = 3,
  /**
   * Input data was malformed or inconsistent.
   */
  TS_STATUS_DATA = 4,
  /**
   * An argument was out of range.
   */
  TS_STATUS_INVALID_ARGUMENT = 5,
  /**
   * The library panicked; the call had no effect.
   */
  TS_STATUS_INTERNAL = 6,
} TsStatus;

/**
 * A BM25 index over answer documents.
 */
typedef struct TsIndex TsIndex;

/**
 * A trained segmentation model.
 */
typedef struct TsModel TsModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *ts_version(void);

/**
 * Message for the most recent failure on this thread; empty if none.
 */
const char *ts_last_error(void);

/**
 * Releases a string returned by this library. NULL is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void ts_string_free(char *s);

/**
 * Loads a model file written by `segtool train`.
 *
 * # Safety
 * `path` must be a valid C string; `out` must be writable.
 */
enum TsStatus ts_model_load(const char *path, struct TsModel **out);

/**
 * # Safety
 * `model` must come from [`ts_model_load`] and not have been freed.
 */
void ts_model_free(struct TsModel *model);

/**
 * Segments `input` and writes
 * `{"tokens": [...], "spans": [{"start","end","label","text"}]}` to `out`.
 * Token indices are half-open. Models trained with contextual streams are
 * rejected because streams cannot be supplied here.
 *
 * # Safety
 * `model` must be a live handle, `input` a valid C string and `out`
 * writable.
 */
enum TsStatus ts_model_segment(const struct TsModel *model, const char *input, char **out);

/**
 * Scores predicted spans against gold spans. Both arguments hold corpus
 * JSON lines with the same documents in the same order. Writes the
 * micro-averaged and per-label report to `out`.
 *
 * # Safety
 * `gold` and `pred` must be valid C strings and `out` writable.
 */
enum TsStatus ts_evaluate(const char *gold, const char *pred, char **out);

/**
 * Builds an index from answer JSON lines (`{"id", "text"}` per line).
 *
 * # Safety
 * `answers` must be a valid C string and `out` writable.
 */
enum TsStatus ts_index_build(const char *answers, struct TsIndex **out);

/**
 * Loads an index file written by `segtool index`.
 *
 * # Safety
 * `path` must be a valid C string and `out` writable.
 */
enum TsStatus ts_index_load(const char *path, struct TsIndex **out);

/**
 * Writes `index` to `path`.
 *
 * # Safety
 * `index` must be a live handle and `path` a valid C string.
 */
enum TsStatus ts_index_save(const struct TsIndex *index, const char *path);

/**
 * Number of indexed answers; 0 for NULL.
 *
 * # Safety
 * `index` must be NULL or a live handle.
 */
size_t ts_index_len(const struct TsIndex *index);

/**
 * # Safety
 * `index` must come from this library and not have been freed.
 */
void ts_index_free(struct TsIndex *index);

/**
 * Top `k` answers for `query` as `[{"id", "score"}]`.
 *
 * With a `model`, the query is segmented and each field is weighted by
 * `boosts_json` (an object mapping labels and `"O"` to positive weights;
 * NULL means uniform). Without a model the whole query is one field.
 *
 * # Safety
 * `index` must be a live handle, `model` NULL or a live handle, `query` a
 * valid C string, `boosts_json` NULL or a valid C string, `out` writable.
 */
enum TsStatus ts_index_search(const struct TsIndex *index,
                              const struct TsModel *model,
                              const char *query,
                              const char *boosts_json,
                              size_t k,
                              char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TECHSEG_H */
