//! C interface. Metrics are opaque handles; every call returns a status code
//! and leaves a message for [`cf_last_error`] on failure.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use conicflow::config;
use conicflow::flow::{self, FlowOptions, RayKind};
use conicflow::geometry::{Bump, ConformalBump, Euclidean, Potential, ScatteringMetric};
use conicflow::parametrix;
use conicflow::sojourn::{self, Branch, SourcePoint};
use conicflow::Error;

/// Status codes returned by every function.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Domain = 4,
    Trapped = 5,
    NoConvergence = 6,
    OutOfInjectivity = 7,
    Numerical = 8,
    Panic = 9,
}

/// Opaque metric handle.
pub struct CfMetric {
    inner: Box<dyn ScatteringMetric>,
}

/// Time direction selector for sojourn data.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CfBranch {
    Forward = 0,
    Backward = 1,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> CfStatus {
    match e {
        Error::Config(_) | Error::Io(_) => CfStatus::Config,
        Error::Domain(_) => CfStatus::Domain,
        Error::Trapped { .. } => CfStatus::Trapped,
        Error::NoConvergence { .. } | Error::Extrapolation { .. } => CfStatus::NoConvergence,
        Error::OutOfInjectivity { .. } => CfStatus::OutOfInjectivity,
        _ => CfStatus::Numerical,
    }
}

/// Runs `f`, translating errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (CfStatus, String)>) -> CfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CfStatus::Ok,
        Ok(Err((s, msg))) => {
            set_error(msg);
            s
        }
        Err(_) => {
            set_error("internal panic".into());
            CfStatus::Panic
        }
    }
}

fn lift<T>(r: conicflow::Result<T>) -> Result<T, (CfStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (CfStatus, String) {
    (CfStatus::NullPointer, format!("{what} is null"))
}

unsafe fn metric_ref<'a>(m: *const CfMetric) -> Result<&'a dyn ScatteringMetric, (CfStatus, String)> {
    m.as_ref().map(|m| m.inner.as_ref()).ok_or_else(|| null("metric"))
}

unsafe fn pair(p: *const f64, what: &str) -> Result<[f64; 2], (CfStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok([*p, *p.add(1)])
}

fn boxed(m: Box<dyn ScatteringMetric>, out: *mut *mut CfMetric) {
    let h = Box::into_raw(Box::new(CfMetric { inner: m }));
    // SAFETY: `out` was checked to be non-null by the caller.
    unsafe { *out = h };
}

/// Message of the last failed call on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn cf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Flat plane with compactification collar `x0` and injectivity bound `iota`.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn cf_metric_euclidean(x0: f64, iota: f64, out: *mut *mut CfMetric) -> CfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        boxed(Box::new(lift(Euclidean::new(2, x0, iota, Potential::Zero))?), out);
        Ok(())
    })
}

/// Conformal bump `(1 + epsilon * bump) g_flat` in the plane.
///
/// # Safety
/// `center` must point to two doubles; `out` to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn cf_metric_conformal_bump(
    epsilon: f64,
    center: *const f64,
    radius: f64,
    x0: f64,
    iota: f64,
    out: *mut *mut CfMetric,
) -> CfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let c = pair(center, "center")?;
        let bump = lift(Bump::new(c.to_vec(), radius))?;
        boxed(Box::new(lift(ConformalBump::new(2, epsilon, bump, x0, iota, Potential::Zero))?), out);
        Ok(())
    })
}

/// Metric described by the `[metric]` section of a TOML configuration.
///
/// # Safety
/// `toml` must be a NUL-terminated string; `out` writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn cf_metric_from_toml(toml: *const c_char, out: *mut *mut CfMetric) -> CfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if toml.is_null() {
            return Err(null("toml"));
        }
        let text = CStr::from_ptr(toml)
            .to_str()
            .map_err(|_| (CfStatus::InvalidArgument, "configuration is not UTF-8".to_string()))?;
        let cfg = lift(config::parse(text))?;
        boxed(lift(cfg.metric.build())?, out);
        Ok(())
    })
}

/// Releases a handle. NULL is ignored.
///
/// # Safety
/// `m` must come from one of the constructors and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn cf_metric_free(m: *mut CfMetric) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Dimension of the metric, or 0 for NULL.
///
/// # Safety
/// `m` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cf_metric_dim(m: *const CfMetric) -> usize {
    m.as_ref().map_or(0, |m| m.inner.dim())
}

fn source(metric: &dyn ScatteringMetric, w: [f64; 2], eta: [f64; 2]) -> Result<SourcePoint, (CfStatus, String)> {
    let e = lift(flow::normalize_covector(metric, &w, &eta))?;
    lift(SourcePoint::new(metric, w.to_vec(), e))
}

/// Sojourn data `(y0, nu, mu)` of the ray through `(w, eta)`; `eta` is
/// normalized first. `tol` <= 0 selects the default accuracy.
///
/// # Safety
/// `w`, `eta` must point to two doubles and `out` to three.
#[no_mangle]
pub unsafe extern "C" fn cf_sojourn(
    m: *const CfMetric,
    w: *const f64,
    eta: *const f64,
    branch: CfBranch,
    tol: f64,
    out: *mut f64,
) -> CfStatus {
    guard(|| {
        let metric = metric_ref(m)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let src = source(metric, pair(w, "w")?, pair(eta, "eta")?)?;
        let mut opts = FlowOptions::default();
        if tol > 0.0 {
            opts.tol = tol;
        }
        let which = match branch {
            CfBranch::Forward => Branch::Forward,
            CfBranch::Backward => Branch::Backward,
        };
        let sd = lift(sojourn::sojourn(metric, &src, which, &opts))?;
        *out = sd.y0[0];
        *out.add(1) = sd.nu;
        *out.add(2) = sd.mu[0];
        Ok(())
    })
}

/// Escape certificate within arclength `s_max`: `*nontrapped` is 1 when the
/// ray provably escapes and `*escape_s` the arclength at which it did.
///
/// # Safety
/// `w`, `eta` must point to two doubles; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn cf_classify(
    m: *const CfMetric,
    w: *const f64,
    eta: *const f64,
    s_max: f64,
    nontrapped: *mut i32,
    escape_s: *mut f64,
) -> CfStatus {
    guard(|| {
        let metric = metric_ref(m)?;
        if nontrapped.is_null() || escape_s.is_null() {
            return Err(null("output"));
        }
        let src = source(metric, pair(w, "w")?, pair(eta, "eta")?)?;
        let c = lift(flow::classify_ray(metric, &src.w, &src.eta_hat, s_max))?;
        *nontrapped = i32::from(c.kind == RayKind::Nontrapped);
        *escape_s = c.escape_s.unwrap_or(f64::NAN);
        Ok(())
    })
}

/// Phase `d(w, z)^2 / 2` along the minimizing geodesic.
///
/// # Safety
/// `w`, `z` must point to two doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cf_phase(m: *const CfMetric, w: *const f64, z: *const f64, out: *mut f64) -> CfStatus {
    guard(|| {
        let metric = metric_ref(m)?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = lift(parametrix::phase_phi(metric, &pair(w, "w")?, &pair(z, "z")?))?;
        Ok(())
    })
}

/// Leading transport amplitude `a0(z, w)`.
///
/// # Safety
/// `w`, `z` must point to two doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cf_amplitude_a0(m: *const CfMetric, w: *const f64, z: *const f64, out: *mut f64) -> CfStatus {
    guard(|| {
        let metric = metric_ref(m)?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = lift(parametrix::amplitude_a0(metric, &pair(w, "w")?, &pair(z, "z")?))?;
        Ok(())
    })
}
