//! C ABI over the toolkit's file-level operations: match a capture against
//! a probe ledger, simulate attack bandwidth from matched responses, and
//! run a whole pipeline config. Results come back as opaque handles read
//! through accessor functions.
//!
//! Conventions:
//! - Fallible calls return a status code: 0 ok, 2 invalid request, 3
//!   unusable input data, 4 internal failure (the CLI's exit codes).
//! - After a non-zero status, `bbkit_last_error` returns a thread-local
//!   message describing what went wrong.
//! - Handles are released exactly once with their `_free` function.
//!   Accessors never take ownership and tolerate NULL by returning zero
//!   (or NaN for ratios); `_free` ignores NULL.
//! - All strings are NUL-terminated UTF-8; paths are passed through to
//!   the filesystem unchanged.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::OnceLock;

use bbkit::attack::{simulate_attack, AttackConfig, AttackTimeline};
use bbkit::classifier::{probe_totals, ProbeTotals};
use bbkit::error::{Error, Result};
use bbkit::matcher::MatchConfig;
use bbkit::model::ledger::parse_probe_ledger;
use bbkit::model::MICROS_PER_SEC;
use bbkit::pipeline::{match_files, read_pipeline_config, run_pipeline, MatchFileStats};
use bbkit::report::{file_digest, open_reader, read_response_rows, rows_to_responses};

/// Success.
pub const BBKIT_OK: i32 = 0;
/// The request itself is invalid: bad arguments, bad configuration.
pub const BBKIT_INVALID: i32 = 2;
/// The request was fine but the input data is unusable.
pub const BBKIT_DATA: i32 = 3;
/// A defect on our side: panic or unexpected environment failure.
pub const BBKIT_INTERNAL: i32 = 4;

thread_local! {
    static LAST_ERROR: RefCell<Vec<u8>> = const { RefCell::new(Vec::new()) };
}

fn set_error(message: String) {
    LAST_ERROR.with(|slot| {
        let mut bytes = message.into_bytes();
        // Interior NULs would truncate the C-side view; make them visible.
        for b in &mut bytes {
            if *b == 0 {
                *b = b'?';
            }
        }
        *slot.borrow_mut() = bytes;
    });
}

fn clear_error() {
    LAST_ERROR.with(|slot| slot.borrow_mut().clear());
}

fn fail(err: &Error) -> i32 {
    set_error(err.to_string());
    err.exit_code()
}

fn invalid(message: impl Into<String>) -> i32 {
    set_error(message.into());
    BBKIT_INVALID
}

/// Run a fallible body, translating panics into `BBKIT_INTERNAL` instead
/// of unwinding across the C boundary.
fn guarded<F: FnOnce() -> i32>(body: F) -> i32 {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic".to_string());
            BBKIT_INTERNAL
        }
    }
}

/// # Safety
/// `ptr` must be NULL or a valid NUL-terminated string.
unsafe fn path_arg(ptr: *const c_char, name: &str) -> std::result::Result<PathBuf, i32> {
    if ptr.is_null() {
        return Err(invalid(format!("{name} must not be NULL")));
    }
    match CStr::from_ptr(ptr).to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => Err(invalid(format!("{name} is not valid UTF-8"))),
    }
}

/// Toolkit version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn bbkit_version() -> *const c_char {
    static VERSION: OnceLock<CString> = OnceLock::new();
    VERSION
        .get_or_init(|| CString::new(bbkit::VERSION).expect("version has no NUL"))
        .as_ptr()
}

/// Copy the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to `cap` bytes) and return the full message length in bytes,
/// 0 when the last call succeeded. `buf` may be NULL to query the length.
///
/// # Safety
/// `buf` must be NULL or valid for writes of `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn bbkit_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|slot| {
        let message = slot.borrow();
        if !buf.is_null() && cap > 0 {
            let n = message.len().min(cap - 1);
            std::ptr::copy_nonoverlapping(message.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        message.len()
    })
}

/// Outcome of one matching run. Opaque; read it through the
/// `bbkit_match_*` accessors and release it with
/// `bbkit_match_result_free`.
pub struct BbkitMatchResult {
    stats: MatchFileStats,
}

/// Match a packet trace (native text or classic capture) against a probe
/// ledger, writing the responses file to `out_path`. `window_secs` is the
/// probe expiry window; `ack_mode` selects the TCP ack interpretation
/// ("seq-plus-one", "seq-exact", "either", or NULL for the default).
/// On success, `*result` (when `result` is non-NULL) receives a handle
/// the caller must free.
///
/// # Safety
/// String arguments must be NULL or valid NUL-terminated strings;
/// `result` must be NULL or valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn bbkit_match_files(
    ledger: *const c_char,
    trace: *const c_char,
    out_path: *const c_char,
    window_secs: i64,
    ack_mode: *const c_char,
    result: *mut *mut BbkitMatchResult,
) -> i32 {
    let ledger = match path_arg(ledger, "ledger") {
        Ok(p) => p,
        Err(status) => return status,
    };
    let trace = match path_arg(trace, "trace") {
        Ok(p) => p,
        Err(status) => return status,
    };
    let out = match path_arg(out_path, "out_path") {
        Ok(p) => p,
        Err(status) => return status,
    };
    let mut config = MatchConfig::default();
    if window_secs <= 0 {
        return invalid("window_secs must be positive");
    }
    config.expiry_window_us = window_secs.saturating_mul(MICROS_PER_SEC);
    if !ack_mode.is_null() {
        let mode = match CStr::from_ptr(ack_mode).to_str() {
            Ok(s) => s,
            Err(_) => return invalid("ack_mode is not valid UTF-8"),
        };
        config.tcp_ack_mode = match mode.parse() {
            Ok(m) => m,
            Err(err) => return fail(&err),
        };
    }
    guarded(|| match match_files(&ledger, &trace, &config, &out) {
        Ok(stats) => {
            clear_error();
            if !result.is_null() {
                *result = Box::into_raw(Box::new(BbkitMatchResult { stats }));
            }
            BBKIT_OK
        }
        Err(err) => fail(&err),
    })
}

#[no_mangle]
pub extern "C" fn bbkit_match_probes_total(result: *const BbkitMatchResult) -> u64 {
    unsafe { result.as_ref() }.map_or(0, |r| r.stats.probes_total)
}

#[no_mangle]
pub extern "C" fn bbkit_match_matched_packets(result: *const BbkitMatchResult) -> u64 {
    unsafe { result.as_ref() }.map_or(0, |r| r.stats.matched_packets)
}

#[no_mangle]
pub extern "C" fn bbkit_match_unmatched_packets(result: *const BbkitMatchResult) -> u64 {
    unsafe { result.as_ref() }.map_or(0, |r| r.stats.unmatched_packets)
}

/// Matched packets over all packets; NaN for a NULL handle, 0 for an
/// empty trace.
#[no_mangle]
pub extern "C" fn bbkit_match_fraction(result: *const BbkitMatchResult) -> f64 {
    match unsafe { result.as_ref() } {
        None => f64::NAN,
        Some(r) => {
            let total = r.stats.matched_packets + r.stats.unmatched_packets;
            if total == 0 {
                0.0
            } else {
                r.stats.matched_packets as f64 / total as f64
            }
        }
    }
}

/// Release a match result. NULL is ignored.
///
/// # Safety
/// `result` must be NULL or a pointer obtained from `bbkit_match_files`
/// that has not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn bbkit_match_result_free(result: *mut BbkitMatchResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// A simulated attack timeline. Opaque; read it through the
/// `bbkit_timeline_*` accessors and release it with `bbkit_timeline_free`.
pub struct BbkitTimeline {
    timeline: AttackTimeline,
}

unsafe fn collect_paths(
    items: *const *const c_char,
    count: usize,
    name: &str,
) -> std::result::Result<Vec<PathBuf>, i32> {
    if count == 0 {
        return Ok(Vec::new());
    }
    if items.is_null() {
        return Err(invalid(format!("{name} is NULL but {count} entries were promised")));
    }
    let mut paths = Vec::with_capacity(count);
    for i in 0..count {
        paths.push(path_arg(*items.add(i), &format!("{name}[{i}]"))?);
    }
    Ok(paths)
}

fn load_responses(paths: &[PathBuf]) -> Result<Vec<bbkit::model::MatchedResponse>> {
    let mut responses = Vec::new();
    for path in paths {
        let rows = read_response_rows(open_reader(path)?)?;
        responses.extend(rows_to_responses(&rows));
    }
    Ok(responses)
}

fn load_probe_totals(paths: &[PathBuf]) -> Result<Option<ProbeTotals>> {
    if paths.is_empty() {
        return Ok(None);
    }
    let mut totals = ProbeTotals::default();
    for path in paths {
        let parsed = parse_probe_ledger(open_reader(path)?)?;
        let t = probe_totals(&parsed.records);
        totals.packets += t.packets;
        totals.bytes += t.bytes;
    }
    Ok(Some(totals))
}

/// Simulate the bandwidth of replaying the probes behind these responses
/// as one simultaneous fleet, `repeat` times at `period_us` spacing
/// (whole seconds; pass 1 and 1000000 for a single shot). Ledgers, when
/// given, supply the attacker-side cost totals. On success `*timeline`
/// receives a handle the caller must free.
///
/// # Safety
/// The arrays must hold `n_responses` / `n_ledgers` valid NUL-terminated
/// strings; `timeline` must be valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn bbkit_simulate_attack(
    responses: *const *const c_char,
    n_responses: usize,
    ledgers: *const *const c_char,
    n_ledgers: usize,
    repeat: u32,
    period_us: i64,
    timeline: *mut *mut BbkitTimeline,
) -> i32 {
    if timeline.is_null() {
        return invalid("timeline must not be NULL");
    }
    if n_responses == 0 {
        return invalid("at least one responses file is required");
    }
    let response_paths = match collect_paths(responses, n_responses, "responses") {
        Ok(p) => p,
        Err(status) => return status,
    };
    let ledger_paths = match collect_paths(ledgers, n_ledgers, "ledgers") {
        Ok(p) => p,
        Err(status) => return status,
    };
    let config = AttackConfig { repeat, period_us };
    guarded(|| {
        let run = || -> Result<AttackTimeline> {
            let responses = load_responses(&response_paths)?;
            let probes = load_probe_totals(&ledger_paths)?;
            simulate_attack(&responses, probes, &config)
        };
        match run() {
            Ok(result) => {
                clear_error();
                *timeline = Box::into_raw(Box::new(BbkitTimeline { timeline: result }));
                BBKIT_OK
            }
            Err(err) => fail(&err),
        }
    })
}

/// Number of one-second bins in the timeline.
#[no_mangle]
pub extern "C" fn bbkit_timeline_seconds(timeline: *const BbkitTimeline) -> usize {
    unsafe { timeline.as_ref() }.map_or(0, |t| t.timeline.bins.len())
}

/// Packets per second in one bin; 0 when the bin is out of range.
#[no_mangle]
pub extern "C" fn bbkit_timeline_packets_at(timeline: *const BbkitTimeline, second: usize) -> u64 {
    unsafe { timeline.as_ref() }
        .and_then(|t| t.timeline.bins.get(second))
        .map_or(0, |bin| bin.packets)
}

/// Bytes per second in one bin; 0 when the bin is out of range.
#[no_mangle]
pub extern "C" fn bbkit_timeline_bytes_at(timeline: *const BbkitTimeline, second: usize) -> u64 {
    unsafe { timeline.as_ref() }
        .and_then(|t| t.timeline.bins.get(second))
        .map_or(0, |bin| bin.bytes)
}

#[no_mangle]
pub extern "C" fn bbkit_timeline_total_packets(timeline: *const BbkitTimeline) -> u64 {
    unsafe { timeline.as_ref() }.map_or(0, |t| t.timeline.total_packets)
}

#[no_mangle]
pub extern "C" fn bbkit_timeline_total_bytes(timeline: *const BbkitTimeline) -> u64 {
    unsafe { timeline.as_ref() }.map_or(0, |t| t.timeline.total_bytes)
}

/// First-second packet amplification (first-bin packets over probe
/// packets); NaN when undefined or the handle is NULL.
#[no_mangle]
pub extern "C" fn bbkit_timeline_packet_amplification(timeline: *const BbkitTimeline) -> f64 {
    unsafe { timeline.as_ref() }
        .and_then(|t| t.timeline.first_second_packet_amplification())
        .unwrap_or(f64::NAN)
}

/// First-second volume amplification (first-bin bytes over probe bytes);
/// NaN when undefined or the handle is NULL.
#[no_mangle]
pub extern "C" fn bbkit_timeline_volume_amplification(timeline: *const BbkitTimeline) -> f64 {
    unsafe { timeline.as_ref() }
        .and_then(|t| t.timeline.first_second_volume_amplification())
        .unwrap_or(f64::NAN)
}

/// Release a timeline. NULL is ignored.
///
/// # Safety
/// `timeline` must be NULL or a pointer obtained from
/// `bbkit_simulate_attack` that has not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn bbkit_timeline_free(timeline: *mut BbkitTimeline) {
    if !timeline.is_null() {
        drop(Box::from_raw(timeline));
    }
}

/// Run a whole pipeline from a config file, equivalent to `bbkit run
/// --config config_path`.
///
/// # Safety
/// `config_path` must be a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn bbkit_run_pipeline(config_path: *const c_char) -> i32 {
    let path = match path_arg(config_path, "config_path") {
        Ok(p) => p,
        Err(status) => return status,
    };
    guarded(|| {
        let run = || -> Result<()> {
            let config = read_pipeline_config(&path)?;
            let digest = file_digest(&path)?;
            run_pipeline(&config, &[("config".to_string(), digest)])?;
            Ok(())
        };
        match run() {
            Ok(()) => {
                clear_error();
                BBKIT_OK
            }
            Err(err) => fail(&err),
        }
    })
}
