#ifndef TRANSVAL_H
#define TRANSVAL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Bit flags for unsoundness reasons.
 */
#define TV_REASON_RETURN_VALUE 1

#define TV_REASON_MEMORY 2

#define TV_REASON_NEW_UB 4

typedef enum TvBackend {
  TV_BACKEND_REMOTE = 0,
  TV_BACKEND_HEURISTIC = 1,
  TV_BACKEND_ORACLE = 2,
} TvBackend;

/*
 Result code of every fallible call.
 */
typedef enum TvStatus {
  TV_STATUS_OK = 0,
  TV_STATUS_NULL_ARGUMENT = 1,
  TV_STATUS_INVALID_UTF8 = 2,
  TV_STATUS_PARSE_ERROR = 3,
  TV_STATUS_SIGNATURE_MISMATCH = 4,
  TV_STATUS_DECODE_ERROR = 5,
  TV_STATUS_INVALID_ARGUMENT = 6,
  TV_STATUS_PANIC = 7,
} TvStatus;

typedef enum TvVerdict {
  TV_VERDICT_SOUND = 0,
  TV_VERDICT_UNSOUND = 1,
  TV_VERDICT_UNKNOWN = 2,
} TvVerdict;

/*
 A parsed source/target pair.
 */
typedef struct TvPair TvPair;

/*
 A validation report.
 */
typedef struct TvReport TvReport;

/*
 Checker settings; obtain defaults from `tv_check_options_default`.
 */
typedef struct TvCheckOptions {
  uint32_t max_enum_bits;
  uint64_t fuel;
  uint32_t undef_budget;
  uint32_t mem_cells_per_ptr_param;
  uint64_t timeout_ms;
} TvCheckOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or null. The pointer
 stays valid until the next failing call on the same thread.
 */
const char *tv_last_error_message(void);

/*
 Releases a string returned by this library. Null is ignored.

 # Safety
 `s` must come from this library and not have been freed.
 */
void tv_string_free(char *s);

/*
 Parses a pair. `id` may be null.

 # Safety
 String arguments must be null or NUL-terminated; `out` must be writable.
 */
enum TvStatus tv_pair_parse(const char *src, const char *tgt, const char *id, struct TvPair **out);

/*
 # Safety
 `pair` must be null or come from `tv_pair_parse` and not have been freed.
 */
void tv_pair_free(struct TvPair *pair);

struct TvCheckOptions tv_check_options_default(void);

/*
 Runs the checker alone. `opts` may be null for defaults.

 # Safety
 `pair` must be a live handle, `opts` null or valid, `out` writable.
 */
enum TvStatus tv_check(const struct TvPair *pair,
                       const struct TvCheckOptions *opts,
                       struct TvReport **out);

/*
 Runs checker, predictor and fuzzer with default settings. The remote
 backend reads its key from `OPENAI_API_KEY`; predictor failures are
 reported inside the report, not as a status.

 # Safety
 `pair` must be a live handle and `out` writable.
 */
enum TvStatus tv_validate(const struct TvPair *pair,
                          enum TvBackend backend,
                          uint64_t seed,
                          struct TvReport **out);

/*
 Final verdict and reason mask of a report. `reasons` may be null.

 # Safety
 `report` must be a live handle; `verdict` writable; `reasons` null or writable.
 */
enum TvStatus tv_report_verdict(const struct TvReport *report,
                                enum TvVerdict *verdict,
                                uint32_t *reasons);

/*
 The report as a JSON document; free with `tv_string_free`. Null on a null handle.

 # Safety
 `report` must be null or a live handle.
 */
char *tv_report_json(const struct TvReport *report);

/*
 # Safety
 `report` must be null or a live handle.
 */
void tv_report_free(struct TvReport *report);

/*
 Chat prompt for a pair; both strings are freed with `tv_string_free`.

 # Safety
 `pair` must be a live handle; `system` and `user` writable.
 */
enum TvStatus tv_encode_prompt(const struct TvPair *pair, char **system, char **user);

/*
 Decodes a model response into a verdict (sound or unsound) and reason mask.

 # Safety
 `text` must be NUL-terminated; `verdict` and `reasons` writable.
 */
enum TvStatus tv_decode_response(const char *text, enum TvVerdict *verdict, uint32_t *reasons);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TRANSVAL_H */
