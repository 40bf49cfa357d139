#ifndef MEMLOOP_H
#define MEMLOOP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes shared by every fallible entry point.
 */
typedef enum MlStatus {
  ML_STATUS_OK = 0,
  ML_STATUS_NULL_ARGUMENT = 1,
  ML_STATUS_INVALID_UTF8 = 2,
  ML_STATUS_INVALID_ARGUMENT = 3,
  ML_STATUS_IO = 4,
  ML_STATUS_PARSE = 5,
  ML_STATUS_LLM = 6,
  /**
   * The run finished but every dialogue failed.
   */
  ML_STATUS_RUN_FAILED = 7,
  ML_STATUS_PANIC = 99,
} MlStatus;

/**
 * A loaded dialogue corpus.
 */
typedef struct MlCorpus MlCorpus;

/**
 * A text embedder used for retrieval.
 */
typedef struct MlEmbedder MlEmbedder;

/**
 * A memory store read from a saved run.
 */
typedef struct MlStore MlStore;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or "" after a success.
 * The pointer stays valid until the next call into this library on the
 * same thread and must not be freed.
 */
const char *ml_last_error_message(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and must not be used afterwards.
 */
void ml_string_free(char *s);

/**
 * Library version as a static string.
 */
const char *ml_version(void);

/**
 * Token-level F1 between a prediction and a gold answer, in [0, 1].
 *
 * # Safety
 * `prediction` and `gold` must be NUL-terminated strings; `out_score` must
 * be writable.
 */
enum MlStatus ml_f1_score(const char *prediction, const char *gold, double *out_score);

/**
 * Unigram BLEU with brevity penalty, in [0, 1].
 *
 * # Safety
 * Same contract as [`ml_f1_score`].
 */
enum MlStatus ml_bleu1(const char *prediction, const char *gold, double *out_score);

/**
 * Loads a corpus file. `format` is "native" or "locomo".
 *
 * # Safety
 * String arguments must be NUL-terminated; `out_corpus` must be writable.
 */
enum MlStatus ml_corpus_load(const char *path, const char *format, struct MlCorpus **out_corpus);

/**
 * # Safety
 * `corpus` must come from [`ml_corpus_load`] or be null.
 */
void ml_corpus_free(struct MlCorpus *corpus);

/**
 * Number of dialogues in the corpus; 0 for a null handle.
 *
 * # Safety
 * `corpus` must be a live handle or null.
 */
size_t ml_corpus_dialogue_count(const struct MlCorpus *corpus);

/**
 * Question counts per category as a JSON object, for example
 * `{"multi_hop":1,"open_domain":0,"other":0,"single_hop":3,"temporal":2}`.
 *
 * # Safety
 * `corpus` must be a live handle; `out_json` must be writable. Free the
 * result with [`ml_string_free`].
 */
enum MlStatus ml_corpus_counts_json(const struct MlCorpus *corpus, char **out_json);

/**
 * The local embedder with the default run configuration, which is what
 * [`ml_run_adapt`] uses when no configuration is given.
 */
struct MlEmbedder *ml_embedder_default_new(void);

/**
 * The built-in hashed bag-of-words embedder with an explicit shape.
 * Returns null when `dimension` is 0.
 */
struct MlEmbedder *ml_embedder_local_new(size_t dimension, uint64_t seed);

/**
 * # Safety
 * `embedder` must come from [`ml_embedder_local_new`] or be null.
 */
void ml_embedder_free(struct MlEmbedder *embedder);

/**
 * Loads one dialogue's memory store (`<run>/<dialogue>.memstore.jsonl`).
 *
 * # Safety
 * `path` must be NUL-terminated; `out_store` must be writable.
 */
enum MlStatus ml_store_load(const char *path, struct MlStore **out_store);

/**
 * # Safety
 * `store` must come from [`ml_store_load`] or be null.
 */
void ml_store_free(struct MlStore *store);

/**
 * Number of entries in the store; 0 for a null handle.
 *
 * # Safety
 * `store` must be a live handle or null.
 */
size_t ml_store_len(const struct MlStore *store);

/**
 * Top-`k` entries for `query` as a JSON array of
 * `{"entry_id", "score", "summary", "timestamp_label"}` objects, best first.
 * The embedder must match the one the store was built with.
 *
 * # Safety
 * Handles must be live; `query` must be NUL-terminated; `out_json` must be
 * writable. Free the result with [`ml_string_free`].
 */
enum MlStatus ml_store_retrieve_json(const struct MlStore *store,
                                     const struct MlEmbedder *embedder,
                                     const char *query,
                                     size_t k,
                                     char **out_json);

/**
 * Runs the adaptation loop over a corpus with responses served from a
 * replay log, and saves the run directory. `config_json` may be null for
 * the defaults; otherwise it is a full or partial run configuration.
 * On success `out_summary_json` receives one object per dialogue with
 * `dialogue_id`, `pre`, `post` (each `[passed, total]` or null),
 * `strategy_version` and `error`.
 *
 * Returns `RunFailed` (with the summary still written) when every dialogue
 * failed.
 *
 * # Safety
 * String arguments other than `config_json` must be NUL-terminated and
 * non-null; `out_summary_json` must be writable.
 */
enum MlStatus ml_run_adapt(const char *corpus_path,
                           const char *format,
                           const char *replay_path,
                           const char *run_dir,
                           const char *config_json,
                           size_t parallelism,
                           char **out_summary_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MEMLOOP_H */
