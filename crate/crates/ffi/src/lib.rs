//! C ABI for `invprox`.
//!
//! Conventions:
//! - Every fallible function returns an [`InvproxStatus`]; results go through
//!   out-pointers, which are written only on success (array lengths are also
//!   written on [`InvproxStatus::BufferTooSmall`]).
//! - On failure a human-readable message is stored per thread and can be read
//!   with [`invprox_last_error_message`] until the next failing call.
//! - Handles are opaque and owned by the caller: release them with
//!   [`invprox_analysis_free`]; strings returned by the library with
//!   [`invprox_string_free`].
//! - Panics never cross the boundary; they surface as [`InvproxStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use invprox::config::{Overrides, RunConfig};
use invprox::experiments::{self, RunError};
use invprox::{FunctionVec, KoopmanError, ProximityAnalysis, ProximityReport, Tolerances};

/// Status codes. `2`, `3` and `4` match the CLI exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InvproxStatus {
    Ok = 0,
    /// Invalid configuration, expression, or snapshot file.
    ConfigError = 2,
    /// Numerical failure (degenerate space, non-PSD Gram matrix, ...).
    NumericalError = 3,
    /// An internal consistency check failed.
    ConsistencyError = 4,
    NullPointer = 10,
    InvalidUtf8 = 11,
    /// The output buffer is too short; the required length was written.
    BufferTooSmall = 12,
    InvalidArgument = 13,
    Panic = 99,
}

/// Result of a proximity computation on one dictionary.
pub struct InvproxAnalysis {
    analysis: ProximityAnalysis,
    report: ProximityReport,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(InvproxStatus, String);

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        let status = match e.exit_code() {
            2 => InvproxStatus::ConfigError,
            3 => InvproxStatus::NumericalError,
            _ => InvproxStatus::ConsistencyError,
        };
        Failure(status, e.to_string())
    }
}

impl From<KoopmanError> for Failure {
    fn from(e: KoopmanError) -> Self {
        RunError::from(e).into()
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> InvproxStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => InvproxStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            InvproxStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(InvproxStatus::NullPointer, format!("`{what}` is NULL"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        Failure(
            InvproxStatus::InvalidUtf8,
            format!("`{what}` is not valid UTF-8"),
        )
    })
}

unsafe fn handle<'a>(h: *const InvproxAnalysis) -> Result<&'a InvproxAnalysis, Failure> {
    h.as_ref().ok_or_else(|| null("analysis"))
}

fn analyze(cfg: RunConfig) -> Result<Box<InvproxAnalysis>, Failure> {
    let analysis = experiments::analyze(&cfg)?;
    let report = analysis.report()?;
    Ok(Box::new(InvproxAnalysis { analysis, report }))
}

/// Copies `src` into `buf` (capacity `cap`), always writing `src.len()` to `len`.
unsafe fn copy_out(src: &[f64], buf: *mut f64, cap: usize, len: *mut usize) -> Result<(), Failure> {
    if len.is_null() {
        return Err(null("len"));
    }
    *len = src.len();
    if cap < src.len() {
        return Err(Failure(
            InvproxStatus::BufferTooSmall,
            format!("buffer holds {cap} values, {} needed", src.len()),
        ));
    }
    if !src.is_empty() {
        if buf.is_null() {
            return Err(null("buf"));
        }
        std::ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
    }
    Ok(())
}

/// Message of the last failing call on this thread, or NULL. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn invprox_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn invprox_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Runs the proximity computation for a JSON configuration given as text.
/// Relative snapshot paths resolve against `base_dir` (NULL means the current
/// directory).
///
/// # Safety
/// `config_json` and a non-NULL `base_dir` must be NUL-terminated strings;
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn invprox_analysis_from_json(
    config_json: *const c_char,
    base_dir: *const c_char,
    out: *mut *mut InvproxAnalysis,
) -> InvproxStatus {
    guard(|| {
        let text = str_arg(config_json, "config_json")?;
        let base = if base_dir.is_null() {
            "."
        } else {
            str_arg(base_dir, "base_dir")?
        };
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = RunConfig::from_json(text, Path::new(base), &Overrides::default())
            .map_err(RunError::from)?;
        *out = Box::into_raw(analyze(cfg)?);
        Ok(())
    })
}

/// Like [`invprox_analysis_from_json`], reading the configuration from a file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn invprox_analysis_from_path(
    path: *const c_char,
    out: *mut *mut InvproxAnalysis,
) -> InvproxStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg =
            RunConfig::from_path(Path::new(path), &Overrides::default()).map_err(RunError::from)?;
        *out = Box::into_raw(analyze(cfg)?);
        Ok(())
    })
}

/// Releases a handle. NULL is ignored.
///
/// # Safety
/// `h` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn invprox_analysis_free(h: *mut InvproxAnalysis) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Invariance proximity, in `[0, 1]`.
///
/// # Safety
/// `h` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn invprox_analysis_proximity(
    h: *const InvproxAnalysis,
    out: *mut f64,
) -> InvproxStatus {
    guard(|| {
        let a = handle(h)?;
        *out.as_mut().ok_or_else(|| null("out"))? = a.analysis.proximity();
        Ok(())
    })
}

/// Number of dictionary atoms and dimensions of `S`, `KS` and `S + KS`.
///
/// # Safety
/// `h` must be a live handle; each non-NULL out-pointer must be valid.
#[no_mangle]
pub unsafe extern "C" fn invprox_analysis_dims(
    h: *const InvproxAnalysis,
    num_atoms: *mut usize,
    dim_s: *mut usize,
    dim_ks: *mut usize,
    dim_w: *mut usize,
) -> InvproxStatus {
    guard(|| {
        let a = handle(h)?;
        for (p, v) in [
            (num_atoms, a.analysis.num_atoms()),
            (dim_s, a.report.dim_s),
            (dim_ks, a.report.dim_ks),
            (dim_w, a.report.dim_w),
        ] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Principal angles (radians, ascending) between `S` and `KS`. `len`
/// receives the count; pass `cap = 0` to query it.
///
/// # Safety
/// `h` must be a live handle, `buf` must hold `cap` doubles, `len` must be valid.
#[no_mangle]
pub unsafe extern "C" fn invprox_analysis_angles(
    h: *const InvproxAnalysis,
    buf: *mut f64,
    cap: usize,
    len: *mut usize,
) -> InvproxStatus {
    guard(|| copy_out(&handle(h)?.report.principal_angles_rad, buf, cap, len))
}

/// Dictionary coefficients of a function attaining the proximity (one per atom).
///
/// # Safety
/// As [`invprox_analysis_angles`].
#[no_mangle]
pub unsafe extern "C" fn invprox_analysis_witness(
    h: *const InvproxAnalysis,
    buf: *mut f64,
    cap: usize,
    len: *mut usize,
) -> InvproxStatus {
    guard(|| copy_out(&handle(h)?.report.witness_coeffs, buf, cap, len))
}

/// Relative prediction error `‖Kf − P_S Kf‖ / ‖Kf‖` of `f = Σ coeffs[i] Ψ_i`.
///
/// # Safety
/// `h` must be a live handle, `coeffs` must hold `n` doubles, `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn invprox_analysis_relative_error(
    h: *const InvproxAnalysis,
    coeffs: *const f64,
    n: usize,
    out: *mut f64,
) -> InvproxStatus {
    guard(|| {
        let a = handle(h)?;
        if coeffs.is_null() && n > 0 {
            return Err(null("coeffs"));
        }
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let c = if n == 0 {
            Vec::new()
        } else {
            std::slice::from_raw_parts(coeffs, n).to_vec()
        };
        match a.analysis.relative_error(&FunctionVec::new(c)) {
            Ok(e) => {
                *out = e;
                Ok(())
            }
            Err(e @ (KoopmanError::DimensionMismatch { .. } | KoopmanError::ZeroImage { .. })) => {
                Err(Failure(InvproxStatus::InvalidArgument, e.to_string()))
            }
            Err(e) => Err(e.into()),
        }
    })
}

/// The full report as JSON (the `proximity` subcommand's output). Free the
/// string with [`invprox_string_free`].
///
/// # Safety
/// `h` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn invprox_analysis_report_json(
    h: *const InvproxAnalysis,
    out: *mut *mut c_char,
) -> InvproxStatus {
    guard(|| {
        let a = handle(h)?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let json = experiments::to_json17(&a.report);
        *out = CString::new(json).expect("JSON has no NUL").into_raw();
        Ok(())
    })
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn invprox_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Proximity of the three reference subspaces `S1`, `S2`, `S3` on the built-in
/// planar system at quadrature order `order` (0 selects the default of 20).
///
/// # Safety
/// `out` must hold three doubles.
#[no_mangle]
pub unsafe extern "C" fn invprox_table1(order: usize, out: *mut f64) -> InvproxStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let order = if order == 0 {
            invprox::QuadratureSpace::DEFAULT_ORDER
        } else {
            order
        };
        let rows = experiments::table1(order, &Tolerances::default())?;
        for (i, r) in rows.iter().enumerate() {
            *out.add(i) = r.proximity;
        }
        Ok(())
    })
}
