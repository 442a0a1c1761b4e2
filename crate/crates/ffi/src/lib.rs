//! C ABI for the proxsc estimators.
//!
//! Panels and fits are opaque handles owned by the caller and released with
//! the matching `*_free` function. Every entry point returns a
//! [`ProxscStatus`]; on failure [`proxsc_last_error_message`] describes the
//! most recent error on the calling thread. Strings returned by the library
//! are released with [`proxsc_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use proxsc::bridges::{BasisKind, InstrumentBasis};
use proxsc::dgp::{self, DgpConfig};
use proxsc::gmm::{self, Bandwidth, GmmFit, GmmOptions, HacOptions};
use proxsc::mc;
use proxsc::moments::{Method, MomentSpec};
use proxsc::panel::{self, Layout, PanelData};
use proxsc::Error;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProxscStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Validation = 4,
    Numerical = 5,
    NotConverged = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProxscMethod {
    Outcome = 0,
    Weighting = 1,
    DoublyRobust = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProxscBasis {
    Affine = 0,
    Poly2 = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProxscScenario {
    JustIdentified = 0,
    OverIdentified = 1,
}

/// Estimation settings. Obtain defaults from [`proxsc_estimate_options_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct ProxscEstimateOptions {
    /// A `ProxscMethod` value.
    pub method: i32,
    /// Nonzero for the stationary moment system.
    pub stationary: i32,
    /// A `ProxscBasis` value for the outcome-bridge instruments.
    pub basis_h: i32,
    /// A `ProxscBasis` value for the treatment-bridge instruments.
    pub basis_q: i32,
    pub ci_level: f64,
    /// HAC truncation lag; negative selects the automatic bandwidth.
    pub hac_lag: i64,
    /// Nonzero to center the HAC autocovariances.
    pub hac_centered: i32,
    pub max_iter: u32,
    pub multi_start: u32,
    pub seed: u64,
}

/// A validated panel.
pub struct ProxscPanel {
    inner: PanelData,
}

/// A fitted moment system.
pub struct ProxscFit {
    inner: GmmFit,
    method: Method,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn status_of(err: &Error) -> ProxscStatus {
    match err {
        Error::Io { .. } => ProxscStatus::Io,
        Error::Numerical(_) | Error::RankDeficient { .. } => ProxscStatus::Numerical,
        _ => ProxscStatus::Validation,
    }
}

/// Runs `f`, converting errors and panics into status codes.
fn guard<F: FnOnce() -> Result<(), (ProxscStatus, String)>>(f: F) -> ProxscStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            ProxscStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            ProxscStatus::Panic
        }
    }
}

trait IntoFfi<T> {
    fn ffi(self) -> Result<T, (ProxscStatus, String)>;
}

impl<T> IntoFfi<T> for proxsc::Result<T> {
    fn ffi(self) -> Result<T, (ProxscStatus, String)> {
        self.map_err(|e| (status_of(&e), e.to_string()))
    }
}

fn null(what: &str) -> (ProxscStatus, String) {
    (ProxscStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> (ProxscStatus, String) {
    (ProxscStatus::InvalidArgument, msg.into())
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, (ProxscStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], (ProxscStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn panel_ref<'a>(p: *const ProxscPanel) -> Result<&'a PanelData, (ProxscStatus, String)> {
    p.as_ref().map(|h| &h.inner).ok_or_else(|| null("panel"))
}

unsafe fn fit_ref<'a>(p: *const ProxscFit) -> Result<&'a ProxscFit, (ProxscStatus, String)> {
    p.as_ref().ok_or_else(|| null("fit"))
}

unsafe fn emit_panel(out: *mut *mut ProxscPanel, panel: PanelData) -> Result<(), (ProxscStatus, String)> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(ProxscPanel { inner: panel }));
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn proxsc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the most recent failure on this thread; empty after success.
/// Valid until the next library call on the same thread.
#[no_mangle]
pub extern "C" fn proxsc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads a delimited panel file. `layout_path` may be null, in which case
/// `<path without extension>.layout` is read.
///
/// # Safety
/// `path` and a non-null `layout_path` must be NUL-terminated strings;
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn proxsc_panel_load(
    path: *const c_char,
    layout_path: *const c_char,
    out: *mut *mut ProxscPanel,
) -> ProxscStatus {
    guard(|| {
        let path = Path::new(c_str(path, "path")?);
        let layout_file = if layout_path.is_null() {
            path.with_extension("layout")
        } else {
            Path::new(c_str(layout_path, "layout path")?).to_path_buf()
        };
        let layout = Layout::from_config_file(&layout_file).ffi()?;
        emit_panel(out, panel::load_panel(path, &layout).ffi()?)
    })
}

/// Builds a panel from row-major arrays: `y` has `n_periods` entries, `w`
/// `n_periods * dw`, `z` `n_periods * dz` (NaN marks a missing proxy).
///
/// # Safety
/// Arrays must hold the stated number of elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn proxsc_panel_from_arrays(
    y: *const f64,
    w: *const f64,
    dw: usize,
    z: *const f64,
    dz: usize,
    n_periods: usize,
    t0: usize,
    out: *mut *mut ProxscPanel,
) -> ProxscStatus {
    guard(|| {
        let nw = n_periods.checked_mul(dw).ok_or_else(|| invalid("size overflow"))?;
        let nz = n_periods.checked_mul(dz).ok_or_else(|| invalid("size overflow"))?;
        let y = slice(y, n_periods, "y")?.to_vec();
        let w = slice(w, nw, "w")?.to_vec();
        let z = slice(z, nz, "z")?.to_vec();
        emit_panel(out, PanelData::new(y, w, dw, z, dz, t0).ffi()?)
    })
}

/// Simulates a panel. `scenario` is a `ProxscScenario` value; `k` is
/// ignored for the over-identified design.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn proxsc_panel_simulate(
    scenario: i32,
    k: usize,
    n_periods: usize,
    seed: u64,
    out: *mut *mut ProxscPanel,
) -> ProxscStatus {
    guard(|| {
        let cfg = match scenario {
            x if x == ProxscScenario::JustIdentified as i32 => DgpConfig::just_identified(k, n_periods, seed),
            x if x == ProxscScenario::OverIdentified as i32 => DgpConfig::over_identified(n_periods, seed),
            other => return Err(invalid(format!("unknown scenario code {other}"))),
        };
        emit_panel(out, dgp::simulate(&cfg).ffi()?.panel)
    })
}

/// New panel with a pooled polynomial trend of `degree` removed.
///
/// # Safety
/// `panel` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn proxsc_panel_detrend(
    panel: *const ProxscPanel,
    degree: usize,
    out: *mut *mut ProxscPanel,
) -> ProxscStatus {
    guard(|| {
        let (p, _) = panel::detrend(panel_ref(panel)?, degree).ffi()?;
        emit_panel(out, p)
    })
}

/// New panel holding the pre-treatment periods split at `placebo_t0`.
///
/// # Safety
/// `panel` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn proxsc_panel_placebo(
    panel: *const ProxscPanel,
    placebo_t0: usize,
    out: *mut *mut ProxscPanel,
) -> ProxscStatus {
    guard(|| emit_panel(out, panel::placebo_split(panel_ref(panel)?, placebo_t0).ffi()?))
}

/// Writes the panel dimensions; any output pointer may be null.
///
/// # Safety
/// `panel` must be a live handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn proxsc_panel_dims(
    panel: *const ProxscPanel,
    n_periods: *mut usize,
    t0: *mut usize,
    dw: *mut usize,
    dz: *mut usize,
) -> ProxscStatus {
    guard(|| {
        let p = panel_ref(panel)?;
        for (dst, v) in [(n_periods, p.n_periods()), (t0, p.t0()), (dw, p.dw()), (dz, p.dz())] {
            if !dst.is_null() {
                *dst = v;
            }
        }
        Ok(())
    })
}

/// # Safety
/// `panel` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn proxsc_panel_free(panel: *mut ProxscPanel) {
    if !panel.is_null() {
        drop(Box::from_raw(panel));
    }
}

#[no_mangle]
pub extern "C" fn proxsc_estimate_options_default() -> ProxscEstimateOptions {
    let g = GmmOptions::default();
    ProxscEstimateOptions {
        method: ProxscMethod::DoublyRobust as i32,
        stationary: 1,
        basis_h: ProxscBasis::Affine as i32,
        basis_q: ProxscBasis::Affine as i32,
        ci_level: g.ci_level,
        hac_lag: -1,
        hac_centered: 0,
        max_iter: g.max_iter as u32,
        multi_start: g.multi_start as u32,
        seed: g.seed,
    }
}

fn basis(b: i32) -> Result<BasisKind, (ProxscStatus, String)> {
    match b {
        x if x == ProxscBasis::Affine as i32 => Ok(BasisKind::Affine),
        x if x == ProxscBasis::Poly2 as i32 => Ok(BasisKind::Poly2),
        other => Err(invalid(format!("unknown basis code {other}"))),
    }
}

/// Fits the moment system. `options` may be null for defaults. The column
/// arrays select zero-based donor (`h_cols`) and supplemental (`q_cols`)
/// columns for the two bridges; a length of 0 selects all columns.
///
/// A fit that did not converge is still returned through `out`, with status
/// `NotConverged`.
///
/// # Safety
/// `panel` must be a live handle, arrays must hold the stated lengths, and
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn proxsc_estimate(
    panel: *const ProxscPanel,
    options: *const ProxscEstimateOptions,
    h_cols: *const usize,
    n_h_cols: usize,
    q_cols: *const usize,
    n_q_cols: usize,
    out: *mut *mut ProxscFit,
) -> ProxscStatus {
    guard(|| {
        let p = panel_ref(panel)?;
        if out.is_null() {
            return Err(null("output pointer"));
        }
        let o = options.as_ref().copied().unwrap_or_else(|| proxsc_estimate_options_default());
        let method = match o.method {
            x if x == ProxscMethod::Outcome as i32 => Method::OutcomeOnly,
            x if x == ProxscMethod::Weighting as i32 => Method::WeightingOnly,
            x if x == ProxscMethod::DoublyRobust as i32 => Method::DoublyRobust,
            other => return Err(invalid(format!("unknown method code {other}"))),
        };
        let mut spec = MomentSpec::new(method, p);
        spec.stationary = o.stationary != 0;
        let h = slice(h_cols, n_h_cols, "h_cols")?;
        if !h.is_empty() {
            spec.h_columns = h.to_vec();
        }
        let q = slice(q_cols, n_q_cols, "q_cols")?;
        if !q.is_empty() {
            spec.q_columns = q.to_vec();
        }
        spec.gh = InstrumentBasis::all(basis(o.basis_h)?, p.dz());
        spec.gq = InstrumentBasis::all(basis(o.basis_q)?, p.dw());
        let gopts = GmmOptions {
            max_iter: o.max_iter as usize,
            multi_start: o.multi_start as usize,
            seed: o.seed,
            ci_level: o.ci_level,
            hac: HacOptions {
                bandwidth: if o.hac_lag < 0 {
                    Bandwidth::NeweyWestAuto
                } else {
                    Bandwidth::Fixed(o.hac_lag as usize)
                },
                centered: o.hac_centered != 0,
                ..Default::default()
            },
            ..Default::default()
        };
        let fit = gmm::fit(p, &spec, &gopts, None).ffi()?;
        let converged = fit.converged;
        *out = Box::into_raw(Box::new(ProxscFit { inner: fit, method }));
        if !converged {
            return Err((ProxscStatus::NotConverged, "optimizer did not converge".into()));
        }
        Ok(())
    })
}

/// ATT estimate and standard error (NaN when unavailable).
///
/// # Safety
/// `fit` must be a live handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn proxsc_fit_att(fit: *const ProxscFit, estimate: *mut f64, se: *mut f64) -> ProxscStatus {
    guard(|| {
        let f = &fit_ref(fit)?.inner;
        if !estimate.is_null() {
            *estimate = f.att_estimate;
        }
        if !se.is_null() {
            *se = f.att_se;
        }
        Ok(())
    })
}

/// Wald interval for the ATT. Returns `NotConverged` (outputs untouched)
/// when the interval is empty.
///
/// # Safety
/// `fit` must be a live handle; `lo` and `hi` must be writable.
#[no_mangle]
pub unsafe extern "C" fn proxsc_fit_ci(fit: *const ProxscFit, lo: *mut f64, hi: *mut f64) -> ProxscStatus {
    guard(|| {
        let f = &fit_ref(fit)?.inner;
        if lo.is_null() || hi.is_null() {
            return Err(null("output pointer"));
        }
        match f.att_ci {
            Some((l, h)) => {
                *lo = l;
                *hi = h;
                Ok(())
            }
            None => Err((ProxscStatus::NotConverged, "no confidence interval for this fit".into())),
        }
    })
}

/// Convergence flag (1 or 0) and objective value at the optimum.
///
/// # Safety
/// `fit` must be a live handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn proxsc_fit_status(fit: *const ProxscFit, converged: *mut i32, objective: *mut f64) -> ProxscStatus {
    guard(|| {
        let f = &fit_ref(fit)?.inner;
        if !converged.is_null() {
            *converged = i32::from(f.converged);
        }
        if !objective.is_null() {
            *objective = f.objective_value;
        }
        Ok(())
    })
}

/// Copies the parameter vector into `buf` (up to `len` values) and writes the
/// full length to `needed`. Pass `buf = NULL, len = 0` to query the length.
///
/// # Safety
/// `fit` must be a live handle; `buf` must hold `len` values; `needed` may be null.
#[no_mangle]
pub unsafe extern "C" fn proxsc_fit_theta(fit: *const ProxscFit, buf: *mut f64, len: usize, needed: *mut usize) -> ProxscStatus {
    guard(|| {
        let theta = &fit_ref(fit)?.inner.theta_hat;
        if !needed.is_null() {
            *needed = theta.len();
        }
        if len > 0 {
            if buf.is_null() {
                return Err(null("buffer"));
            }
            let n = len.min(theta.len());
            ptr::copy_nonoverlapping(theta.as_ptr(), buf, n);
        }
        Ok(())
    })
}

/// JSON summary of the fit. Release with [`proxsc_string_free`].
///
/// # Safety
/// `fit` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn proxsc_fit_report_json(fit: *const ProxscFit, out: *mut *mut c_char) -> ProxscStatus {
    guard(|| {
        let h = fit_ref(fit)?;
        if out.is_null() {
            return Err(null("output pointer"));
        }
        let f = &h.inner;
        let method = match h.method {
            Method::OutcomeOnly => "h",
            Method::WeightingOnly => "q",
            Method::DoublyRobust => "dr",
        };
        let report = serde_json::json!({
            "method": method,
            "estimate": f.att_estimate,
            "se": f.att_se,
            "ci": f.att_ci,
            "converged": f.converged,
            "objective": f.objective_value,
            "theta": f.theta_hat,
            "diagnostics": f.diagnostics,
        });
        let text = serde_json::to_string(&report).map_err(|e| invalid(e.to_string()))?;
        *out = CString::new(text).map_err(|e| invalid(e.to_string()))?.into_raw();
        Ok(())
    })
}

/// # Safety
/// `fit` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn proxsc_fit_free(fit: *mut ProxscFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// # Safety
/// `s` must be null or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn proxsc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Wilson score interval for `successes` out of `n`.
///
/// # Safety
/// `lo` and `hi` must be writable.
#[no_mangle]
pub unsafe extern "C" fn proxsc_wilson_interval(successes: usize, n: usize, level: f64, lo: *mut f64, hi: *mut f64) -> ProxscStatus {
    guard(|| {
        if lo.is_null() || hi.is_null() {
            return Err(null("output pointer"));
        }
        let (l, h) = mc::wilson_interval(successes, n, level).ffi()?;
        *lo = l;
        *hi = h;
        Ok(())
    })
}
