/* C interface to bbkit, the blowback measurement toolkit.
* Generated by cbindgen; edit the Rust side instead. */

#ifndef BBKIT_H
#define BBKIT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Success.
 */
#define BBKIT_OK 0

/**
 * The request itself is invalid: bad arguments, bad configuration.
 */
#define BBKIT_INVALID 2

/**
 * The request was fine but the input data is unusable.
 */
#define BBKIT_DATA 3

/**
 * A defect on our side: panic or unexpected environment failure.
 */
#define BBKIT_INTERNAL 4

/**
 * Outcome of one matching run. Opaque; read it through the
 * `bbkit_match_*` accessors and release it with
 * `bbkit_match_result_free`.
 */
typedef struct BbkitMatchResult BbkitMatchResult;

/**
 * A simulated attack timeline. Opaque; read it through the
 * `bbkit_timeline_*` accessors and release it with `bbkit_timeline_free`.
 */
typedef struct BbkitTimeline BbkitTimeline;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Toolkit version as a static NUL-terminated string.
 */
const char *bbkit_version(void);

/**
 * Copy the calling thread's last error message into `buf` (NUL-terminated,
 * truncated to `cap` bytes) and return the full message length in bytes,
 * 0 when the last call succeeded. `buf` may be NULL to query the length.
 *
 * # Safety
 * `buf` must be NULL or valid for writes of `cap` bytes.
 */
uintptr_t bbkit_last_error(char *buf, uintptr_t cap);

/**
 * Match a packet trace (native text or classic capture) against a probe
 * ledger, writing the responses file to `out_path`. `window_secs` is the
 * probe expiry window; `ack_mode` selects the TCP ack interpretation
 * ("seq-plus-one", "seq-exact", "either", or NULL for the default).
 * On success, `*result` (when `result` is non-NULL) receives a handle
 * the caller must free.
 *
 * # Safety
 * String arguments must be NULL or valid NUL-terminated strings;
 * `result` must be NULL or valid for a pointer write.
 */
int32_t bbkit_match_files(const char *ledger,
                          const char *trace,
                          const char *out_path,
                          int64_t window_secs,
                          const char *ack_mode,
                          struct BbkitMatchResult **result);

uint64_t bbkit_match_probes_total(const struct BbkitMatchResult *result);

uint64_t bbkit_match_matched_packets(const struct BbkitMatchResult *result);

uint64_t bbkit_match_unmatched_packets(const struct BbkitMatchResult *result);

/**
 * Matched packets over all packets; NaN for a NULL handle, 0 for an
 * empty trace.
 */
double bbkit_match_fraction(const struct BbkitMatchResult *result);

/**
 * Release a match result. NULL is ignored.
 *
 * # Safety
 * `result` must be NULL or a pointer obtained from `bbkit_match_files`
 * that has not been freed yet.
 */
void bbkit_match_result_free(struct BbkitMatchResult *result);

/**
 * Simulate the bandwidth of replaying the probes behind these responses
 * as one simultaneous fleet, `repeat` times at `period_us` spacing
 * (whole seconds; pass 1 and 1000000 for a single shot). Ledgers, when
 * given, supply the attacker-side cost totals. On success `*timeline`
 * receives a handle the caller must free.
 *
 * # Safety
 * The arrays must hold `n_responses` / `n_ledgers` valid NUL-terminated
 * strings; `timeline` must be valid for a pointer write.
 */
int32_t bbkit_simulate_attack(const char *const *responses,
                              uintptr_t n_responses,
                              const char *const *ledgers,
                              uintptr_t n_ledgers,
                              uint32_t repeat,
                              int64_t period_us,
                              struct BbkitTimeline **timeline);

/**
 * Number of one-second bins in the timeline.
 */
uintptr_t bbkit_timeline_seconds(const struct BbkitTimeline *timeline);

/**
 * Packets per second in one bin; 0 when the bin is out of range.
 */
uint64_t bbkit_timeline_packets_at(const struct BbkitTimeline *timeline, uintptr_t second);

/**
 * Bytes per second in one bin; 0 when the bin is out of range.
 */
uint64_t bbkit_timeline_bytes_at(const struct BbkitTimeline *timeline, uintptr_t second);

uint64_t bbkit_timeline_total_packets(const struct BbkitTimeline *timeline);

uint64_t bbkit_timeline_total_bytes(const struct BbkitTimeline *timeline);

/**
 * First-second packet amplification (first-bin packets over probe
 * packets); NaN when undefined or the handle is NULL.
 */
double bbkit_timeline_packet_amplification(const struct BbkitTimeline *timeline);

/**
 * First-second volume amplification (first-bin bytes over probe bytes);
 * NaN when undefined or the handle is NULL.
 */
double bbkit_timeline_volume_amplification(const struct BbkitTimeline *timeline);

/**
 * Release a timeline. NULL is ignored.
 *
 * # Safety
 * `timeline` must be NULL or a pointer obtained from
 * `bbkit_simulate_attack` that has not been freed yet.
 */
void bbkit_timeline_free(struct BbkitTimeline *timeline);

/**
 * Run a whole pipeline from a config file, equivalent to `bbkit run
 * --config config_path`.
 *
 * # Safety
 * `config_path` must be a valid NUL-terminated string.
 */
int32_t bbkit_run_pipeline(const char *config_path);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BBKIT_H */
