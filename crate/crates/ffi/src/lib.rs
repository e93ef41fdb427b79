//! C ABI over `gridsched-core`.
//!
//! Conventions:
//! * Every fallible function returns a [`GsStatus`]; results come back through
//!   out-pointers. On failure [`gs_last_error_message`] describes the error.
//! * Strings going in are NUL-terminated UTF-8. Strings coming out are owned by
//!   the caller and must be released with [`gs_string_free`].
//! * A [`GsLedger`] handle is created by [`gs_ledger_new`] or
//!   [`gs_ledger_from_json`] and released with [`gs_ledger_free`]. Handles are
//!   not thread-safe; use one per thread or lock around them.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use gridsched::ledger::{LedgerError, LoadLedger};
use gridsched::profiles::{
    compute_app_id, parse_application_profile, parse_computer_profile,
    serialize_application_profile, serialize_computer_profile,
};
use gridsched::simkernel::{self, Scenario};

/// Result codes. Zero is success.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    /// The ledger would become infeasible.
    Rejected = 4,
    UnknownJob = 5,
    DuplicateJob = 6,
    /// Malformed or schema-violating XML or JSON.
    ParseError = 7,
    /// Scenario failed validation.
    ConfigError = 8,
    /// A Rust panic was caught at the boundary.
    Internal = 9,
}

/// A node's bid for one query window.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GsBid {
    pub window_s: f64,
    pub unsubscribed_marks: f64,
    pub confidence: f64,
}

/// Opaque load ledger.
pub struct GsLedger {
    inner: LoadLedger,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: GsStatus, msg: impl Into<String>) -> GsStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> GsStatus) -> GsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(GsStatus::Internal, "internal panic"),
    }
}

unsafe fn read_str<'a>(p: *const c_char) -> Result<&'a str, GsStatus> {
    if p.is_null() {
        return Err(fail(GsStatus::NullPointer, "null string argument"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(GsStatus::InvalidUtf8, "string argument is not UTF-8"))
}

unsafe fn write_string(out: *mut *mut c_char, s: String) -> GsStatus {
    if out.is_null() {
        return fail(GsStatus::NullPointer, "null out pointer");
    }
    match CString::new(s) {
        Ok(c) => {
            *out = c.into_raw();
            GsStatus::Ok
        }
        Err(_) => fail(GsStatus::Internal, "output contains NUL"),
    }
}

unsafe fn ledger<'a>(h: *mut GsLedger) -> Result<&'a mut LoadLedger, GsStatus> {
    h.as_mut()
        .map(|h| &mut h.inner)
        .ok_or_else(|| fail(GsStatus::NullPointer, "null ledger handle"))
}

fn ledger_status(e: LedgerError) -> GsStatus {
    let code = match e {
        LedgerError::Rejected(_) => GsStatus::Rejected,
        LedgerError::UnknownJob(_) => GsStatus::UnknownJob,
        LedgerError::DuplicateJobId(_) => GsStatus::DuplicateJob,
        _ => GsStatus::InvalidArgument,
    };
    fail(code, e.to_string())
}

macro_rules! tri {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(s) => return s,
        }
    };
}

/// Message for the last failure on this thread, or NULL. Valid until the next
/// call into this library from the same thread; do not free.
#[no_mangle]
pub extern "C" fn gs_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn gs_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Library version, static storage; do not free.
#[no_mangle]
pub extern "C" fn gs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates an empty ledger for a node running at `rate` marks/s, clock at `now`.
///
/// # Safety
/// `node_id` must be a valid C string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn gs_ledger_new(
    node_id: *const c_char,
    rate: f64,
    now: f64,
    out: *mut *mut GsLedger,
) -> GsStatus {
    guard(|| {
        let id = tri!(read_str(node_id));
        if out.is_null() {
            return fail(GsStatus::NullPointer, "null out pointer");
        }
        let inner = tri!(LoadLedger::new(id, rate, now).map_err(ledger_status));
        *out = Box::into_raw(Box::new(GsLedger { inner }));
        GsStatus::Ok
    })
}

/// Restores a ledger from [`gs_ledger_to_json`] output.
///
/// # Safety
/// `json` must be a valid C string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn gs_ledger_from_json(json: *const c_char, out: *mut *mut GsLedger) -> GsStatus {
    guard(|| {
        let text = tri!(read_str(json));
        if out.is_null() {
            return fail(GsStatus::NullPointer, "null out pointer");
        }
        let inner = tri!(LoadLedger::from_json(text)
            .map_err(|e| fail(GsStatus::ParseError, e.to_string())));
        *out = Box::into_raw(Box::new(GsLedger { inner }));
        GsStatus::Ok
    })
}

/// Destroys a ledger. NULL is ignored.
///
/// # Safety
/// `ledger` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn gs_ledger_free(ledger: *mut GsLedger) {
    if !ledger.is_null() {
        drop(Box::from_raw(ledger));
    }
}

/// Admits a commitment if the ledger stays feasible; `GS_STATUS_REJECTED`
/// otherwise, leaving the ledger unchanged.
///
/// # Safety
/// `l` must be a live handle; strings must be valid C strings.
#[no_mangle]
pub unsafe extern "C" fn gs_ledger_admit(
    l: *mut GsLedger,
    job_id: *const c_char,
    app_id: *const c_char,
    booked_marks: f64,
    due_time: f64,
    on_time_prob: f64,
) -> GsStatus {
    guard(|| {
        let l = tri!(ledger(l));
        let job = tri!(read_str(job_id));
        let app = tri!(read_str(app_id));
        tri!(l
            .admit(job, app, booked_marks, due_time, on_time_prob)
            .map_err(ledger_status));
        GsStatus::Ok
    })
}

/// Largest extra commitment due at `now + window_s` that still fits.
///
/// # Safety
/// `l` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gs_ledger_unsubscribed(l: *mut GsLedger, window_s: f64, out: *mut f64) -> GsStatus {
    guard(|| {
        let l = tri!(ledger(l));
        if out.is_null() {
            return fail(GsStatus::NullPointer, "null out pointer");
        }
        *out = tri!(l.unsubscribed(window_s).map_err(ledger_status));
        GsStatus::Ok
    })
}

/// # Safety
/// `l` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gs_ledger_make_bid(l: *mut GsLedger, window_s: f64, out: *mut GsBid) -> GsStatus {
    guard(|| {
        let l = tri!(ledger(l));
        if out.is_null() {
            return fail(GsStatus::NullPointer, "null out pointer");
        }
        let bid = tri!(l.make_bid(window_s).map_err(ledger_status));
        *out = GsBid {
            window_s: bid.window_s,
            unsubscribed_marks: bid.unsubscribed_marks,
            confidence: bid.confidence,
        };
        GsStatus::Ok
    })
}

/// # Safety
/// `l` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gs_ledger_is_feasible(l: *mut GsLedger, out: *mut bool) -> GsStatus {
    guard(|| {
        let l = tri!(ledger(l));
        if out.is_null() {
            return fail(GsStatus::NullPointer, "null out pointer");
        }
        *out = l.is_feasible();
        GsStatus::Ok
    })
}

/// Records progress on a job. `retired` (may be NULL) is set when the booking
/// is used up and the commitment leaves the ledger.
///
/// # Safety
/// `l` must be a live handle; `job_id` a valid C string.
#[no_mangle]
pub unsafe extern "C" fn gs_ledger_consume(
    l: *mut GsLedger,
    job_id: *const c_char,
    marks: f64,
    retired: *mut bool,
) -> GsStatus {
    guard(|| {
        let l = tri!(ledger(l));
        let job = tri!(read_str(job_id));
        let r = tri!(l.consume(job, marks).map_err(ledger_status));
        if !retired.is_null() {
            *retired = r.is_some();
        }
        GsStatus::Ok
    })
}

/// Moves the ledger clock forward. `misses` (may be NULL) receives how many
/// commitments became late.
///
/// # Safety
/// `l` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn gs_ledger_advance_time(l: *mut GsLedger, t: f64, misses: *mut usize) -> GsStatus {
    guard(|| {
        let l = tri!(ledger(l));
        let m = tri!(l.advance_time(t).map_err(ledger_status));
        if !misses.is_null() {
            *misses = m.len();
        }
        GsStatus::Ok
    })
}

/// # Safety
/// `l` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gs_ledger_to_json(l: *mut GsLedger, out: *mut *mut c_char) -> GsStatus {
    guard(|| {
        let l = tri!(ledger(l));
        write_string(out, l.to_json())
    })
}

/// Checks a computer or application profile document.
///
/// # Safety
/// `xml` must be a valid C string.
#[no_mangle]
pub unsafe extern "C" fn gs_profile_validate(xml: *const c_char) -> GsStatus {
    gs_profile_canonicalize(xml, std::ptr::null_mut())
}

/// Parses a profile and, when `out` is not NULL, returns its canonical XML.
///
/// # Safety
/// `xml` must be a valid C string; `out` NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn gs_profile_canonicalize(xml: *const c_char, out: *mut *mut c_char) -> GsStatus {
    guard(|| {
        let text = tri!(read_str(xml));
        let canonical = if text.contains("<applicationProfile") {
            parse_application_profile(text).map(|p| serialize_application_profile(&p))
        } else {
            parse_computer_profile(text).map(|p| serialize_computer_profile(&p))
        };
        let canonical = tri!(canonical.map_err(|e| fail(GsStatus::ParseError, e.to_string())));
        if out.is_null() {
            GsStatus::Ok
        } else {
            write_string(out, canonical)
        }
    })
}

/// Hex SHA-256 application id for `name` and `version`.
///
/// # Safety
/// Strings must be valid C strings and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gs_compute_app_id(
    name: *const c_char,
    version: *const c_char,
    out: *mut *mut c_char,
) -> GsStatus {
    guard(|| {
        let n = tri!(read_str(name));
        let v = tri!(read_str(version));
        let id = tri!(compute_app_id(n, v).map_err(|e| fail(GsStatus::InvalidArgument, e.to_string())));
        write_string(out, id)
    })
}

/// Runs a scenario given as JSON and returns the report JSON.
///
/// # Safety
/// `scenario_json` must be a valid C string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gs_simulate(scenario_json: *const c_char, out: *mut *mut c_char) -> GsStatus {
    guard(|| {
        let text = tri!(read_str(scenario_json));
        let scenario = tri!(Scenario::from_json(text)
            .map_err(|e| fail(GsStatus::ConfigError, e.to_string())));
        let run = tri!(simkernel::run(&scenario)
            .map_err(|e| fail(GsStatus::ConfigError, e.to_string())));
        write_string(out, run.report.to_json())
    })
}
