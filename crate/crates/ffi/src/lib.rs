//! C ABI over the laycon pipelines.
//!
//! Handles are opaque and owned by the caller once returned; free them with
//! the matching `*_free` function. Strings returned through `char **` out
//! parameters are freed with `lc_string_free`. Every fallible call returns an
//! `LcStatus`; on failure `lc_last_error` gives a message for the calling
//! thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use laycon::cli::{certify, simulate, summarize, write_trajectory_csv, CliError, RunConfig, SCENARIO_A, SCENARIO_B};
use laycon::sim::{RunOutput, TrajRow};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Simulation = 4,
    OutOfRange = 5,
    Io = 6,
    Panic = 7,
}

/// Validated run configuration.
pub struct LcConfig {
    inner: RunConfig,
}

/// Result of one simulation run.
pub struct LcTrajectory {
    out: RunOutput,
    summary_json: String,
}

/// One integration step, same columns as trajectory.csv.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LcRow {
    pub t: f64,
    pub v_gr: f64,
    pub i_s: f64,
    pub i_b: f64,
    pub e_s: f64,
    pub e_b: f64,
    pub v: f64,
    pub r_v: f64,
    pub r_ib: f64,
    pub e1: f64,
    pub e2: f64,
    pub v_e: f64,
    pub gamma_v: f64,
    pub phi: f64,
    pub w: f64,
    pub d: f64,
    pub u_s: f64,
    pub u_b: f64,
    pub fallback: u8,
}

impl From<&TrajRow> for LcRow {
    fn from(r: &TrajRow) -> Self {
        LcRow {
            t: r.t,
            v_gr: r.v_gr,
            i_s: r.i_s,
            i_b: r.i_b,
            e_s: r.e_s,
            e_b: r.e_b,
            v: r.v,
            r_v: r.r_v,
            r_ib: r.r_ib,
            e1: r.e1,
            e2: r.e2,
            v_e: r.v_e,
            gamma_v: r.gamma_v,
            phi: r.phi,
            w: r.w,
            d: r.d,
            u_s: r.u_s,
            u_b: r.u_b,
            fallback: r.fallback,
        }
    }
}

/// Headline certificate numbers.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LcCertSummary {
    pub v_bar_h: f64,
    pub lambda_e: f64,
    pub gamma_iss: f64,
    pub epsilon: f64,
    pub eps_e: f64,
    pub eps_t: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub inf_gamma: f64,
    pub all_verdicts: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn fail(status: LcStatus, msg: impl AsRef<str>) -> LcStatus {
    set_error(msg.as_ref());
    status
}

fn from_cli(e: CliError) -> LcStatus {
    let status = match e {
        CliError::Config(_) => LcStatus::Config,
        CliError::Sim(_) => LcStatus::Simulation,
        CliError::Io(_) | CliError::Output(_) => LcStatus::Io,
    };
    fail(status, e.to_string())
}

fn guard(f: impl FnOnce() -> LcStatus) -> LcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(LcStatus::Panic, "internal panic"),
    }
}

unsafe fn read_str<'a>(p: *const c_char) -> Result<&'a str, LcStatus> {
    if p.is_null() {
        return Err(fail(LcStatus::NullPointer, "null string argument"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(LcStatus::InvalidUtf8, "argument is not valid UTF-8"))
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> LcStatus {
    match CString::new(s) {
        Ok(c) => {
            *out = c.into_raw();
            LcStatus::Ok
        }
        Err(_) => fail(LcStatus::Io, "output contains a NUL byte"),
    }
}

fn config_handle(r: Result<RunConfig, CliError>, out: *mut *mut LcConfig) -> LcStatus {
    match r {
        Ok(inner) => {
            unsafe { *out = Box::into_raw(Box::new(LcConfig { inner })) };
            LcStatus::Ok
        }
        Err(e) => from_cli(e),
    }
}

/// Message for the last failed call on this thread. Valid until the next
/// failing call on the same thread.
#[no_mangle]
pub extern "C" fn lc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Static description of a status code.
#[no_mangle]
pub extern "C" fn lc_status_message(status: LcStatus) -> *const c_char {
    let s: &'static [u8] = match status {
        LcStatus::Ok => b"ok\0",
        LcStatus::NullPointer => b"null pointer\0",
        LcStatus::InvalidUtf8 => b"invalid UTF-8\0",
        LcStatus::Config => b"configuration error\0",
        LcStatus::Simulation => b"simulation error\0",
        LcStatus::OutOfRange => b"index out of range\0",
        LcStatus::Io => b"I/O error\0",
        LcStatus::Panic => b"internal panic\0",
    };
    s.as_ptr() as *const c_char
}

/// Parse and validate a JSON configuration.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lc_config_from_json(json: *const c_char, out: *mut *mut LcConfig) -> LcStatus {
    guard(|| {
        if out.is_null() {
            return fail(LcStatus::NullPointer, "null out pointer");
        }
        match read_str(json) {
            Ok(s) => config_handle(RunConfig::from_json(s), out),
            Err(st) => st,
        }
    })
}

/// Load and validate a JSON configuration file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lc_config_from_file(path: *const c_char, out: *mut *mut LcConfig) -> LcStatus {
    guard(|| {
        if out.is_null() {
            return fail(LcStatus::NullPointer, "null out pointer");
        }
        match read_str(path) {
            Ok(s) => config_handle(RunConfig::load(Path::new(s)), out),
            Err(st) => st,
        }
    })
}

/// Bundled scenario: 0 for A, 1 for B.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lc_config_scenario(which: u32, out: *mut *mut LcConfig) -> LcStatus {
    guard(|| {
        if out.is_null() {
            return fail(LcStatus::NullPointer, "null out pointer");
        }
        let text = match which {
            0 => SCENARIO_A,
            1 => SCENARIO_B,
            _ => return fail(LcStatus::OutOfRange, "scenario must be 0 or 1"),
        };
        config_handle(RunConfig::from_json(text), out)
    })
}

/// Serialize a configuration back to JSON.
///
/// # Safety
/// `cfg` must come from an `lc_config_*` constructor; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn lc_config_to_json(cfg: *const LcConfig, out: *mut *mut c_char) -> LcStatus {
    guard(|| {
        if cfg.is_null() || out.is_null() {
            return fail(LcStatus::NullPointer, "null argument");
        }
        match serde_json::to_string(&(&*cfg).inner) {
            Ok(s) => put_string(out, s),
            Err(e) => fail(LcStatus::Io, e.to_string()),
        }
    })
}

/// # Safety
/// `cfg` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lc_config_free(cfg: *mut LcConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Compute the offline certificates. `summary` and `json_out` may each be
/// null when not wanted.
///
/// # Safety
/// `cfg` must be a live handle; non-null out pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn lc_certify(
    cfg: *const LcConfig,
    summary: *mut LcCertSummary,
    json_out: *mut *mut c_char,
) -> LcStatus {
    guard(|| {
        if cfg.is_null() {
            return fail(LcStatus::NullPointer, "null config");
        }
        let cert = match certify(&(&*cfg).inner) {
            Ok(c) => c,
            Err(e) => return from_cli(e),
        };
        let r = &cert.report;
        if !summary.is_null() {
            *summary = LcCertSummary {
                v_bar_h: r.v_bar_h,
                lambda_e: r.lambda_e,
                gamma_iss: r.gamma_iss,
                epsilon: r.epsilon,
                eps_e: r.eps_e,
                eps_t: r.eps_t,
                tau1: r.tau1,
                tau2: r.tau2,
                inf_gamma: r.inf_gamma,
                all_verdicts: r.all_verdicts,
            };
        }
        if !json_out.is_null() {
            return match serde_json::to_string_pretty(r) {
                Ok(s) => put_string(json_out, s),
                Err(e) => fail(LcStatus::Io, e.to_string()),
            };
        }
        LcStatus::Ok
    })
}

/// Simulate one seed.
///
/// # Safety
/// `cfg` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lc_run(cfg: *const LcConfig, seed: u64, out: *mut *mut LcTrajectory) -> LcStatus {
    guard(|| {
        if cfg.is_null() || out.is_null() {
            return fail(LcStatus::NullPointer, "null argument");
        }
        let c = &(&*cfg).inner;
        let result = certify(c).and_then(|cert| simulate(c, &cert, seed).map(|o| (cert, o)));
        match result {
            Ok((cert, o)) => {
                let doc = summarize(&o, &cert);
                let summary_json = match serde_json::to_string_pretty(&doc) {
                    Ok(s) => s,
                    Err(e) => return fail(LcStatus::Io, e.to_string()),
                };
                *out = Box::into_raw(Box::new(LcTrajectory { out: o, summary_json }));
                LcStatus::Ok
            }
            Err(e) => from_cli(e),
        }
    })
}

/// Number of logged integration steps; 0 for a null handle.
///
/// # Safety
/// `traj` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lc_trajectory_len(traj: *const LcTrajectory) -> usize {
    if traj.is_null() {
        0
    } else {
        (&*traj).out.log.rows.len()
    }
}

/// # Safety
/// `traj` must be a live handle and `row` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lc_trajectory_row(traj: *const LcTrajectory, index: usize, row: *mut LcRow) -> LcStatus {
    guard(|| {
        if traj.is_null() || row.is_null() {
            return fail(LcStatus::NullPointer, "null argument");
        }
        match (&*traj).out.log.rows.get(index) {
            Some(r) => {
                *row = LcRow::from(r);
                LcStatus::Ok
            }
            None => fail(LcStatus::OutOfRange, format!("row {index} out of range")),
        }
    })
}

/// Summary document as JSON, same keys as summary.json.
///
/// # Safety
/// `traj` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lc_trajectory_summary_json(traj: *const LcTrajectory, out: *mut *mut c_char) -> LcStatus {
    guard(|| {
        if traj.is_null() || out.is_null() {
            return fail(LcStatus::NullPointer, "null argument");
        }
        put_string(out, (&*traj).summary_json.clone())
    })
}

/// Monitor verdicts as JSON, same layout as monitor.json.
///
/// # Safety
/// `traj` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lc_trajectory_monitor_json(traj: *const LcTrajectory, out: *mut *mut c_char) -> LcStatus {
    guard(|| {
        if traj.is_null() || out.is_null() {
            return fail(LcStatus::NullPointer, "null argument");
        }
        match serde_json::to_string(&(&*traj).out.monitor) {
            Ok(s) => put_string(out, s),
            Err(e) => fail(LcStatus::Io, e.to_string()),
        }
    })
}

/// Write trajectory.csv-format output to `path`.
///
/// # Safety
/// `traj` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn lc_trajectory_write_csv(traj: *const LcTrajectory, path: *const c_char) -> LcStatus {
    guard(|| {
        if traj.is_null() {
            return fail(LcStatus::NullPointer, "null trajectory");
        }
        let p = match read_str(path) {
            Ok(s) => s,
            Err(st) => return st,
        };
        match write_trajectory_csv(Path::new(p), &(&*traj).out.log.rows) {
            Ok(()) => LcStatus::Ok,
            Err(e) => from_cli(e),
        }
    })
}

/// # Safety
/// `traj` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lc_trajectory_free(traj: *mut LcTrajectory) {
    if !traj.is_null() {
        drop(Box::from_raw(traj));
    }
}

/// # Safety
/// `s` must be null or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
