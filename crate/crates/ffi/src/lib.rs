//! C ABI over the `alphafunnel` crate.
//!
//! Scenarios and trajectories are opaque handles owned by the caller and
//! released with the matching `*_free` function. Every fallible call returns
//! an [`AfStatus`]; on failure a description is kept per thread and can be
//! read with [`af_last_error`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use alphafunnel::cli::scenario::{LoadError, Scenario};
use alphafunnel::sim::{integrate, Trajectory};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AfStatus {
    Ok = 0,
    /// The scenario or an argument value failed validation.
    Validation = 1,
    /// Integration stopped early; the partial trajectory is still returned.
    Abort = 2,
    Io = 3,
    NullPointer = 4,
    InvalidArgument = 5,
    Panic = 6,
}

/// Loaded and validated scenario.
pub struct AfScenario {
    inner: Scenario,
}

/// Recorded closed-loop run.
pub struct AfTrajectory {
    inner: Trajectory,
}

/// Controller diagnostics at one `(t, x)`.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AfControlInfo {
    pub alpha: f64,
    pub alpha_hat: f64,
    pub epsilon: f64,
    pub xi: f64,
    pub barrier: f64,
    pub rho_lower: f64,
    pub rho_upper: f64,
    pub clamped: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: impl ToString) {
    let text = message.to_string().replace('\0', " ");
    let c = CString::new(text).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn fail(status: AfStatus, message: impl ToString) -> AfStatus {
    set_error(message);
    status
}

fn guard(body: impl FnOnce() -> AfStatus) -> AfStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(AfStatus::Panic, format!("panic: {msg}"))
        }
    }
}

fn load_status(e: &LoadError) -> AfStatus {
    if e.is_io() {
        AfStatus::Io
    } else {
        AfStatus::Validation
    }
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, AfStatus> {
    if p.is_null() {
        return Err(fail(AfStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(AfStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, AfStatus> {
    p.as_ref().ok_or_else(|| fail(AfStatus::NullPointer, format!("{what} is null")))
}

unsafe fn state<'a>(x: *const f64, len: usize, dim: usize) -> Result<&'a [f64], AfStatus> {
    if x.is_null() {
        return Err(fail(AfStatus::NullPointer, "state is null"));
    }
    if len != dim {
        return Err(fail(AfStatus::InvalidArgument, format!("state has length {len}, expected {dim}")));
    }
    Ok(slice::from_raw_parts(x, len))
}

unsafe fn out_slice<'a>(p: *mut f64, len: usize, dim: usize, what: &str) -> Result<&'a mut [f64], AfStatus> {
    if p.is_null() {
        return Err(fail(AfStatus::NullPointer, format!("{what} is null")));
    }
    if len != dim {
        return Err(fail(AfStatus::InvalidArgument, format!("{what} has length {len}, expected {dim}")));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn write_out<T>(p: *mut T, value: T, what: &str) -> AfStatus {
    if p.is_null() {
        return fail(AfStatus::NullPointer, format!("{what} is null"));
    }
    p.write(value);
    AfStatus::Ok
}

macro_rules! tri {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(status) => return status,
        }
    };
}

/// Message for the most recent failure on this thread, or an empty string.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn af_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn af_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

fn finish_load(result: Result<Scenario, LoadError>, out: *mut *mut AfScenario) -> AfStatus {
    match result {
        Ok(inner) => {
            let h = Box::into_raw(Box::new(AfScenario { inner }));
            // SAFETY: checked non-null by the callers
            unsafe { out.write(h) };
            AfStatus::Ok
        }
        Err(e) => fail(load_status(&e), e),
    }
}

/// Loads a scenario file. On success `*out` receives a handle to release
/// with [`af_scenario_free`]; otherwise it is set to null.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn af_scenario_load(path: *const c_char, out: *mut *mut AfScenario) -> AfStatus {
    guard(|| {
        if out.is_null() {
            return fail(AfStatus::NullPointer, "out is null");
        }
        out.write(ptr::null_mut());
        let path = tri!(c_str(path, "path"));
        finish_load(Scenario::load(Path::new(path)), out)
    })
}

/// Same as [`af_scenario_load`] but reads the scenario from a string.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn af_scenario_from_toml(text: *const c_char, out: *mut *mut AfScenario) -> AfStatus {
    guard(|| {
        if out.is_null() {
            return fail(AfStatus::NullPointer, "out is null");
        }
        out.write(ptr::null_mut());
        let text = tri!(c_str(text, "text"));
        finish_load(Scenario::from_toml(text), out)
    })
}

/// # Safety
/// `scenario` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn af_scenario_free(scenario: *mut AfScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// State dimension, or 0 for a null handle.
///
/// # Safety
/// `scenario` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn af_scenario_dim(scenario: *const AfScenario) -> usize {
    scenario.as_ref().map_or(0, |s| s.inner.plant.dim())
}

/// Metric value at the scenario's initial state and time zero.
///
/// # Safety
/// `scenario` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn af_scenario_alpha0(scenario: *const AfScenario, out: *mut f64) -> AfStatus {
    guard(|| {
        let s = tri!(handle(scenario, "scenario"));
        write_out(out, s.inner.alpha0, "out")
    })
}

unsafe fn metric_value(
    scenario: *const AfScenario,
    t: f64,
    x: *const f64,
    len: usize,
    out: *mut f64,
    exact: bool,
) -> AfStatus {
    guard(|| {
        let s = tri!(handle(scenario, "scenario"));
        let x = tri!(state(x, len, s.inner.plant.dim()));
        let metric = s.inner.metric();
        let v = if exact { metric.alpha_bar(t, x) } else { metric.alpha(t, x) };
        match v {
            Ok(v) => write_out(out, v, "out"),
            Err(e) => fail(AfStatus::Validation, e),
        }
    })
}

/// Smooth metric at `(t, x)`; `len` must equal the state dimension.
///
/// # Safety
/// `scenario` must be a live handle, `x` must point to `len` doubles and
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn af_alpha(scenario: *const AfScenario, t: f64, x: *const f64, len: usize, out: *mut f64) -> AfStatus {
    metric_value(scenario, t, x, len, out, false)
}

/// Exact minimum of the predicates at `(t, x)`.
///
/// # Safety
/// As for [`af_alpha`].
#[no_mangle]
pub unsafe extern "C" fn af_alpha_bar(
    scenario: *const AfScenario,
    t: f64,
    x: *const f64,
    len: usize,
    out: *mut f64,
) -> AfStatus {
    metric_value(scenario, t, x, len, out, true)
}

/// State gradient of the smooth metric, written to `grad[0..len]`.
///
/// # Safety
/// `x` and `grad` must each point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn af_grad_alpha(
    scenario: *const AfScenario,
    t: f64,
    x: *const f64,
    len: usize,
    grad: *mut f64,
) -> AfStatus {
    guard(|| {
        let s = tri!(handle(scenario, "scenario"));
        let dim = s.inner.plant.dim();
        let x = tri!(state(x, len, dim));
        let out = tri!(out_slice(grad, len, dim, "grad"));
        match s.inner.metric().grad_alpha_x(t, x) {
            Ok(g) => {
                out.copy_from_slice(&g);
                AfStatus::Ok
            }
            Err(e) => fail(AfStatus::Validation, e),
        }
    })
}

/// Control input at `(t, x)`, written to `u[0..len]`. `info` may be null.
///
/// # Safety
/// `x` and `u` must each point to `len` doubles; `info` must be null or
/// writable.
#[no_mangle]
pub unsafe extern "C" fn af_control(
    scenario: *const AfScenario,
    t: f64,
    x: *const f64,
    len: usize,
    u: *mut f64,
    info: *mut AfControlInfo,
) -> AfStatus {
    guard(|| {
        let s = tri!(handle(scenario, "scenario"));
        let dim = s.inner.plant.dim();
        let x = tri!(state(x, len, dim));
        let out = tri!(out_slice(u, len, dim, "u"));
        match s.inner.controller.control(t, x) {
            Ok(e) => {
                out.copy_from_slice(&e.u);
                if !info.is_null() {
                    info.write(AfControlInfo {
                        alpha: e.alpha,
                        alpha_hat: e.alpha_hat,
                        epsilon: e.epsilon,
                        xi: e.xi,
                        barrier: e.barrier,
                        rho_lower: e.rho_lower,
                        rho_upper: e.rho_upper,
                        clamped: e.clamped,
                    });
                }
                AfStatus::Ok
            }
            Err(e) => fail(AfStatus::Validation, e),
        }
    })
}

/// Lower funnel bound at time `t`, or NaN for a null handle.
///
/// # Safety
/// `scenario` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn af_rho_lower(scenario: *const AfScenario, t: f64) -> f64 {
    scenario.as_ref().map_or(f64::NAN, |s| s.inner.funnel().rho_lower(t))
}

/// Upper funnel bound at time `t`, or NaN for a null handle.
///
/// # Safety
/// `scenario` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn af_rho_upper(scenario: *const AfScenario, t: f64) -> f64 {
    scenario.as_ref().map_or(f64::NAN, |s| s.inner.funnel().rho_upper(t))
}

/// Maximum of the smooth metric over the state at time `t`. The maximiser
/// goes to `maximizer[0..len]`, which may be null. Returns
/// `AF_STATUS_VALIDATION` without converging, after still writing the best
/// point found if there is one.
///
/// # Safety
/// `value` must be writable; `maximizer` must be null or point to `len`
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn af_alpha_opt(
    scenario: *const AfScenario,
    t: f64,
    value: *mut f64,
    maximizer: *mut f64,
    len: usize,
) -> AfStatus {
    guard(|| {
        let s = tri!(handle(scenario, "scenario"));
        let dim = s.inner.plant.dim();
        if value.is_null() {
            return fail(AfStatus::NullPointer, "value is null");
        }
        let out = if maximizer.is_null() {
            None
        } else {
            Some(tri!(out_slice(maximizer, len, dim, "maximizer")))
        };
        let (point, status) = match s.inner.metric().alpha_opt(t, &s.inner.optimizer()) {
            Ok(p) => (Some(p), AfStatus::Ok),
            Err(e) => {
                let best = e.best().cloned();
                (best, fail(AfStatus::Validation, e))
            }
        };
        if let Some(p) = point {
            value.write(p.value);
            if let Some(out) = out {
                out.copy_from_slice(&p.maximizer);
            }
        }
        status
    })
}

/// Runs the closed loop with the scenario's settings. On `AF_STATUS_OK` and
/// `AF_STATUS_ABORT` alike `*out` receives a trajectory handle to release
/// with [`af_trajectory_free`].
///
/// # Safety
/// `scenario` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn af_simulate(scenario: *const AfScenario, out: *mut *mut AfTrajectory) -> AfStatus {
    guard(|| {
        if out.is_null() {
            return fail(AfStatus::NullPointer, "out is null");
        }
        out.write(ptr::null_mut());
        let s = tri!(handle(scenario, "scenario"));
        let trajectory = match integrate(&s.inner.plant, &s.inner.controller, &s.inner.sim) {
            Ok(t) => t,
            Err(e) => return fail(AfStatus::Validation, e),
        };
        let status = match &trajectory.events.abort {
            Some(a) => fail(AfStatus::Abort, a),
            None => AfStatus::Ok,
        };
        out.write(Box::into_raw(Box::new(AfTrajectory { inner: trajectory })));
        status
    })
}

/// # Safety
/// `trajectory` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn af_trajectory_free(trajectory: *mut AfTrajectory) {
    if !trajectory.is_null() {
        drop(Box::from_raw(trajectory));
    }
}

/// Number of recorded samples, or 0 for a null handle.
///
/// # Safety
/// `trajectory` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn af_trajectory_len(trajectory: *const AfTrajectory) -> usize {
    trajectory.as_ref().map_or(0, |t| t.inner.records.len())
}

/// Funnel breaches over the run, or 0 for a null handle.
///
/// # Safety
/// `trajectory` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn af_trajectory_breaches(trajectory: *const AfTrajectory) -> usize {
    trajectory.as_ref().map_or(0, |t| t.inner.events.breaches)
}

/// Whether the run reached its final time.
///
/// # Safety
/// `trajectory` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn af_trajectory_completed(trajectory: *const AfTrajectory) -> bool {
    trajectory.as_ref().is_some_and(|t| t.inner.completed())
}

/// First time the exact minimum turned positive; NaN if it never did.
///
/// # Safety
/// `trajectory` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn af_trajectory_first_positive(trajectory: *const AfTrajectory) -> f64 {
    trajectory
        .as_ref()
        .and_then(|t| t.inner.events.first_positive_alpha_bar)
        .unwrap_or(f64::NAN)
}

/// Recorded sample `index`: time, state (into `x[0..len]`), smooth metric and
/// exact minimum. Any output pointer may be null.
///
/// # Safety
/// `trajectory` must be a live handle; non-null outputs must be writable and
/// `x` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn af_trajectory_sample(
    trajectory: *const AfTrajectory,
    index: usize,
    t: *mut f64,
    x: *mut f64,
    len: usize,
    alpha: *mut f64,
    alpha_bar: *mut f64,
) -> AfStatus {
    guard(|| {
        let tr = tri!(handle(trajectory, "trajectory"));
        let Some(r) = tr.inner.records.get(index) else {
            return fail(
                AfStatus::InvalidArgument,
                format!("sample {index} out of range ({} recorded)", tr.inner.records.len()),
            );
        };
        if !x.is_null() {
            tri!(out_slice(x, len, tr.inner.dim, "x")).copy_from_slice(&r.x);
        }
        for (p, v) in [(t, r.t), (alpha, r.control.alpha), (alpha_bar, r.alpha_bar)] {
            if !p.is_null() {
                p.write(v);
            }
        }
        AfStatus::Ok
    })
}

/// Writes the trajectory as CSV.
///
/// # Safety
/// `trajectory` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn af_trajectory_write_csv(trajectory: *const AfTrajectory, path: *const c_char) -> AfStatus {
    guard(|| {
        let tr = tri!(handle(trajectory, "trajectory"));
        let path = tri!(c_str(path, "path"));
        let written = File::create(path).and_then(|f| {
            let mut w = BufWriter::new(f);
            tr.inner.write_csv(&mut w)?;
            w.flush()
        });
        match written {
            Ok(()) => AfStatus::Ok,
            Err(e) => fail(AfStatus::Io, format!("{path}: {e}")),
        }
    })
}
