#ifndef PROOFMINER_H
#define PROOFMINER_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  PM_STATUS_OK = 0,
  PM_STATUS_NULL_ARGUMENT = 1,
  PM_STATUS_INVALID_UTF8 = 2,
  PM_STATUS_INVALID_ARGUMENT = 3,
  PM_STATUS_PARSE = 4,
  PM_STATUS_MODEL = 5,
  PM_STATUS_INFERENCE = 6,
  PM_STATUS_EVALUATION = 7,
  PM_STATUS_GUIDANCE = 8,
  PM_STATUS_PANIC = 9,
} PmStatus;

typedef enum {
  PM_MODE_GUARDED = 0,
  PM_MODE_CONTROL_ONLY = 1,
} PmMode;

typedef struct PmCorpus PmCorpus;

typedef struct PmModel PmModel;

typedef struct PmSession PmSession;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version, a static string.
 */
const char *pm_version(void);

/**
 * Message for the last failed call on this thread, or NULL. Valid until the
 * next library call on the same thread.
 */
const char *pm_last_error_message(void);

/**
 * # Safety
 * `s` must be NULL or a string returned by this library, not yet freed.
 */
void pm_string_free(char *s);

/**
 * Parses `.v` files into a corpus.
 *
 * # Safety
 * `paths` must point to `count` valid C strings; `out` must be writable.
 */
PmStatus pm_corpus_parse_files(const char *const *paths, size_t count, PmCorpus **out);

/**
 * # Safety
 * `json` must be a valid C string; `out` must be writable.
 */
PmStatus pm_corpus_from_json(const char *json, PmCorpus **out);

/**
 * # Safety
 * `corpus` must be a live handle; `out` must be writable.
 */
PmStatus pm_corpus_to_json(const PmCorpus *corpus, char **out);

/**
 * Number of traces, or 0 for NULL.
 *
 * # Safety
 * `corpus` must be NULL or a live handle.
 */
size_t pm_corpus_len(const PmCorpus *corpus);

/**
 * # Safety
 * `corpus` must be NULL or a handle not yet freed.
 */
void pm_corpus_free(PmCorpus *corpus);

/**
 * Infers a model. `config_json` may be NULL for defaults.
 *
 * # Safety
 * `corpus` must be a live handle, `config_json` NULL or a C string, `out` writable.
 */
PmStatus pm_infer(const PmCorpus *corpus, const char *config_json, PmModel **out);

/**
 * # Safety
 * `json` must be a valid C string; `out` must be writable.
 */
PmStatus pm_model_from_json(const char *json, PmModel **out);

/**
 * # Safety
 * `model` must be a live handle; `out` must be writable.
 */
PmStatus pm_model_to_json(const PmModel *model, char **out);

/**
 * GraphViz rendering of the model.
 *
 * # Safety
 * `model` must be a live handle; `out` must be writable.
 */
PmStatus pm_model_export_dot(const PmModel *model, char **out);

/**
 * Number of states, or 0 for NULL.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
size_t pm_model_state_count(const PmModel *model);

/**
 * Whether trace `index` of `corpus` is accepted by `model`.
 *
 * # Safety
 * `model` and `corpus` must be live handles; `accepted` must be writable.
 */
PmStatus pm_model_accepts(const PmModel *model,
                          const PmCorpus *corpus,
                          size_t index,
                          PmMode mode,
                          bool *accepted);

/**
 * # Safety
 * `model` must be NULL or a handle not yet freed. Sessions keep their own
 * reference to the model.
 */
void pm_model_free(PmModel *model);

/**
 * Cross validation; writes the report as JSON. `foreign` may be NULL.
 *
 * # Safety
 * `corpus` must be a live handle, `foreign` NULL or a live handle, `out` writable.
 */
PmStatus pm_evaluate(const PmCorpus *corpus,
                     const PmCorpus *foreign,
                     size_t k,
                     size_t negatives,
                     uint64_t seed,
                     PmMode mode,
                     char **out);

/**
 * Opens a guidance session at the model's initial state.
 *
 * # Safety
 * `model` must be a live handle; `out` must be writable.
 */
PmStatus pm_session_open(const PmModel *model, PmSession **out);

/**
 * Options at the cursor as JSON.
 *
 * # Safety
 * `session` must be a live handle; `out` must be writable.
 */
PmStatus pm_session_options_json(const PmSession *session, char **out);

/**
 * Takes the `label` transition with the given parameters. If `advisory` is
 * not NULL it receives a guard advisory string, or NULL when there is none.
 *
 * # Safety
 * `session` must be a live handle; `label` a C string; `params` must point
 * to `count` C strings; `advisory` NULL or writable.
 */
PmStatus pm_session_step(PmSession *session,
                         const char *label,
                         const char *const *params,
                         size_t count,
                         bool combined,
                         char **advisory);

/**
 * # Safety
 * `session` must be a live handle.
 */
PmStatus pm_session_undo(PmSession *session);

/**
 * The proof script assembled so far.
 *
 * # Safety
 * `session` must be a live handle; `out` must be writable.
 */
PmStatus pm_session_script(const PmSession *session, char **out);

/**
 * Current state id, or `SIZE_MAX` for NULL.
 *
 * # Safety
 * `session` must be NULL or a live handle.
 */
size_t pm_session_state(const PmSession *session);

/**
 * # Safety
 * `session` must be NULL or a live handle.
 */
bool pm_session_is_accepting(const PmSession *session);

/**
 * # Safety
 * `session` must be NULL or a handle not yet freed.
 */
void pm_session_free(PmSession *session);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PROOFMINER_H */
