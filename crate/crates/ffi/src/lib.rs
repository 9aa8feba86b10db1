//! C ABI for the transval translation validator.
//!
//! Pairs and reports are opaque heap handles released with their `_free`
//! functions. Fallible calls return a [`TvStatus`]; on failure
//! [`tv_last_error_message`] describes the error. Strings returned to the
//! caller are released with [`tv_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use transval::checker::{check_pair, CellInit, CheckConfig, UnsoundReason};
use transval::ir::{parse_pair, ParseError, TransformationPair};
use transval::pipeline::{
    finalize, Final, Pipeline, PipelineConfig, PipelineReport, Routed, Stage, Timings,
};
use transval::predictor::{decode_label, encode_prompt, BackendConfig, Label, RemoteConfig};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TvStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    ParseError = 3,
    SignatureMismatch = 4,
    DecodeError = 5,
    InvalidArgument = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TvVerdict {
    Sound = 0,
    Unsound = 1,
    Unknown = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TvBackend {
    Remote = 0,
    Heuristic = 1,
    Oracle = 2,
}

/// Bit flags for unsoundness reasons.
pub const TV_REASON_RETURN_VALUE: u32 = 1;
pub const TV_REASON_MEMORY: u32 = 2;
pub const TV_REASON_NEW_UB: u32 = 4;

/// Checker settings; obtain defaults from `tv_check_options_default`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TvCheckOptions {
    pub max_enum_bits: u32,
    pub fuel: u64,
    pub undef_budget: u32,
    pub mem_cells_per_ptr_param: u32,
    pub timeout_ms: u64,
}

/// A parsed source/target pair.
pub struct TvPair {
    inner: TransformationPair,
}

/// A validation report.
pub struct TvReport {
    inner: PipelineReport,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let c = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: TvStatus, msg: impl Into<String>) -> TvStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> TvStatus) -> TvStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(TvStatus::Panic, msg)
        }
    }
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, TvStatus> {
    if p.is_null() {
        return Err(fail(TvStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(TvStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

fn to_c(s: &str) -> *mut c_char {
    CString::new(s.replace('\0', " "))
        .unwrap_or_default()
        .into_raw()
}

fn verdict_of(f: &Final) -> TvVerdict {
    match f {
        Final::Sound { .. } => TvVerdict::Sound,
        Final::Unsound { .. } => TvVerdict::Unsound,
        Final::Unknown { .. } => TvVerdict::Unknown,
    }
}

fn reason_mask<'a>(reasons: impl IntoIterator<Item = &'a UnsoundReason>) -> u32 {
    reasons.into_iter().fold(0, |m, r| {
        m | match r {
            UnsoundReason::ReturnValue => TV_REASON_RETURN_VALUE,
            UnsoundReason::Memory => TV_REASON_MEMORY,
            UnsoundReason::NewUB => TV_REASON_NEW_UB,
        }
    })
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn tv_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn tv_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses a pair. `id` may be null.
///
/// # Safety
/// String arguments must be null or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tv_pair_parse(
    src: *const c_char,
    tgt: *const c_char,
    id: *const c_char,
    out: *mut *mut TvPair,
) -> TvStatus {
    guard(|| {
        if out.is_null() {
            return fail(TvStatus::NullArgument, "out is null");
        }
        *out = ptr::null_mut();
        let src = match read_str(src, "src") {
            Ok(s) => s,
            Err(e) => return e,
        };
        let tgt = match read_str(tgt, "tgt") {
            Ok(s) => s,
            Err(e) => return e,
        };
        let id = if id.is_null() {
            "pair"
        } else {
            match read_str(id, "id") {
                Ok(s) => s,
                Err(e) => return e,
            }
        };
        match parse_pair(src, tgt, id) {
            Ok(pair) => {
                *out = Box::into_raw(Box::new(TvPair { inner: pair }));
                TvStatus::Ok
            }
            Err(e @ ParseError::SignatureMismatch { .. }) => {
                fail(TvStatus::SignatureMismatch, e.to_string())
            }
            Err(e) => fail(TvStatus::ParseError, e.to_string()),
        }
    })
}

/// # Safety
/// `pair` must be null or come from `tv_pair_parse` and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn tv_pair_free(pair: *mut TvPair) {
    if !pair.is_null() {
        drop(Box::from_raw(pair));
    }
}

#[no_mangle]
pub extern "C" fn tv_check_options_default() -> TvCheckOptions {
    let d = CheckConfig::default();
    TvCheckOptions {
        max_enum_bits: d.max_enum_bits,
        fuel: d.fuel,
        undef_budget: d.undef_budget,
        mem_cells_per_ptr_param: d.mem_cells_per_ptr_param,
        timeout_ms: d.timeout_ms,
    }
}

fn check_config(opts: &TvCheckOptions) -> CheckConfig {
    CheckConfig {
        max_enum_bits: opts.max_enum_bits,
        fuel: opts.fuel,
        undef_budget: opts.undef_budget,
        mem_cells_per_ptr_param: opts.mem_cells_per_ptr_param,
        mem_init_domain: vec![CellInit::Zero, CellInit::One, CellInit::AllOnes],
        timeout_ms: opts.timeout_ms,
    }
}

/// Runs the checker alone. `opts` may be null for defaults.
///
/// # Safety
/// `pair` must be a live handle, `opts` null or valid, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tv_check(
    pair: *const TvPair,
    opts: *const TvCheckOptions,
    out: *mut *mut TvReport,
) -> TvStatus {
    guard(|| {
        if pair.is_null() || out.is_null() {
            return fail(TvStatus::NullArgument, "pair or out is null");
        }
        *out = ptr::null_mut();
        let opts = if opts.is_null() {
            tv_check_options_default()
        } else {
            *opts
        };
        let cfg = check_config(&opts);
        if let Err(e) = cfg.validate() {
            return fail(TvStatus::InvalidArgument, e.to_string());
        }
        let pair = &(*pair).inner;
        let verdict = check_pair(pair, &cfg);
        let routed = match &verdict {
            transval::checker::Verdict::Unknown { cause } => Routed {
                trace: vec![Stage::Reported],
                final_state: Final::Unknown {
                    cause: (*cause).into(),
                },
                counterexample: None,
            },
            decided => finalize(decided, None, None),
        };
        let report =
            PipelineReport::new(pair, routed, Some(&verdict), None, None, Timings::default());
        *out = Box::into_raw(Box::new(TvReport { inner: report }));
        TvStatus::Ok
    })
}

/// Runs checker, predictor and fuzzer with default settings. The remote
/// backend reads its key from `OPENAI_API_KEY`; predictor failures are
/// reported inside the report, not as a status.
///
/// # Safety
/// `pair` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tv_validate(
    pair: *const TvPair,
    backend: TvBackend,
    seed: u64,
    out: *mut *mut TvReport,
) -> TvStatus {
    guard(|| {
        if pair.is_null() || out.is_null() {
            return fail(TvStatus::NullArgument, "pair or out is null");
        }
        *out = ptr::null_mut();
        let mut cfg = PipelineConfig {
            backend: match backend {
                TvBackend::Remote => BackendConfig::Remote(RemoteConfig::default()),
                TvBackend::Heuristic => BackendConfig::Heuristic,
                TvBackend::Oracle => BackendConfig::Oracle {
                    noise_rate: 0.0,
                    seed,
                },
            },
            ..PipelineConfig::default()
        };
        cfg.fuzz.seed = seed;
        let report = Pipeline::new(cfg).validate(&(*pair).inner);
        *out = Box::into_raw(Box::new(TvReport { inner: report }));
        TvStatus::Ok
    })
}

/// Final verdict and reason mask of a report. `reasons` may be null.
///
/// # Safety
/// `report` must be a live handle; `verdict` writable; `reasons` null or writable.
#[no_mangle]
pub unsafe extern "C" fn tv_report_verdict(
    report: *const TvReport,
    verdict: *mut TvVerdict,
    reasons: *mut u32,
) -> TvStatus {
    guard(|| {
        if report.is_null() || verdict.is_null() {
            return fail(TvStatus::NullArgument, "report or verdict is null");
        }
        let f = &(*report).inner.final_state;
        *verdict = verdict_of(f);
        if !reasons.is_null() {
            *reasons = match f {
                Final::Unsound { reasons, .. } => reason_mask(reasons),
                _ => 0,
            };
        }
        TvStatus::Ok
    })
}

/// The report as a JSON document; free with `tv_string_free`. Null on a null handle.
///
/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tv_report_json(report: *const TvReport) -> *mut c_char {
    if report.is_null() {
        set_error("report is null");
        return ptr::null_mut();
    }
    to_c(&(*report).inner.to_json())
}

/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tv_report_free(report: *mut TvReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// Chat prompt for a pair; both strings are freed with `tv_string_free`.
///
/// # Safety
/// `pair` must be a live handle; `system` and `user` writable.
#[no_mangle]
pub unsafe extern "C" fn tv_encode_prompt(
    pair: *const TvPair,
    system: *mut *mut c_char,
    user: *mut *mut c_char,
) -> TvStatus {
    guard(|| {
        if pair.is_null() || system.is_null() || user.is_null() {
            return fail(TvStatus::NullArgument, "pair, system or user is null");
        }
        let b = encode_prompt(&(*pair).inner);
        *system = to_c(&b.system);
        *user = to_c(&b.user);
        TvStatus::Ok
    })
}

/// Decodes a model response into a verdict (sound or unsound) and reason mask.
///
/// # Safety
/// `text` must be NUL-terminated; `verdict` and `reasons` writable.
#[no_mangle]
pub unsafe extern "C" fn tv_decode_response(
    text: *const c_char,
    verdict: *mut TvVerdict,
    reasons: *mut u32,
) -> TvStatus {
    guard(|| {
        if verdict.is_null() || reasons.is_null() {
            return fail(TvStatus::NullArgument, "verdict or reasons is null");
        }
        let text = match read_str(text, "text") {
            Ok(s) => s,
            Err(e) => return e,
        };
        match decode_label(text) {
            Ok((label, rs)) => {
                *verdict = match label {
                    Label::Sound => TvVerdict::Sound,
                    Label::Unsound => TvVerdict::Unsound,
                };
                *reasons = reason_mask(&rs);
                TvStatus::Ok
            }
            Err(e) => fail(TvStatus::DecodeError, e.to_string()),
        }
    })
}
