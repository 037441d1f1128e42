//! C ABI over `lumpfit`.
//!
//! Every fallible function returns an [`LfStatus`]; on anything other than
//! `LF_STATUS_OK` a human-readable message is available from
//! [`lf_last_error_message`] on the same thread. Handles are opaque and
//! must be released with their matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use lumpfit::control::{synthesize_control, ControlConfig, ControlProblem};
use lumpfit::{Error, LumpedModel, PowerSignal, SolverConfig, TimeGrid};

/// Status codes returned by every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Numerical = 5,
    Diverged = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// Opaque fitted model.
pub struct LfModel {
    inner: LumpedModel,
}

/// Opaque result of a control synthesis.
pub struct LfControl {
    times: Vec<f64>,
    profile: Vec<f64>,
    temperatures: Vec<f64>,
    loss: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(err: &Error) -> LfStatus {
    match err {
        Error::Io { .. } => LfStatus::Io,
        Error::MalformedRow { .. } | Error::NonMonotoneTime { .. } | Error::EmptyRun { .. } | Error::Parse { .. } => {
            LfStatus::Parse
        }
        Error::NonFiniteState { .. } | Error::StepLimitExceeded { .. } | Error::NonFiniteGradient { .. } => {
            LfStatus::Numerical
        }
        Error::DivergedFit(_) => LfStatus::Diverged,
        _ => LfStatus::InvalidArgument,
    }
}

struct Fail(LfStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

/// Runs `f`, records any error or panic, and converts it to a status.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> LfStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LfStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            LfStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(LfStatus::NullPointer, format!("{what} is null"))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(LfStatus::InvalidArgument, "path is not valid UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

unsafe fn model_ref<'a>(m: *const LfModel) -> Result<&'a LumpedModel, Fail> {
    m.as_ref().map(|m| &m.inner).ok_or_else(|| null("model"))
}

unsafe fn slice_arg<'a>(p: *const f64, n: usize, what: &str) -> Result<&'a [f64], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn out_slice<'a>(p: *mut f64, n: usize, what: &str) -> Result<&'a mut [f64], Fail> {
    if n == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, n))
}

/// Message for the most recent failure on this thread, or null. The pointer
/// stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn lf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn lf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Fresh model with default constants, a seeded network and capacitance `c`.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn lf_model_new(seed: u64, capacitance: f64, out: *mut *mut LfModel) -> LfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if !(capacitance > 0.0) || !capacitance.is_finite() {
            return Err(Fail(LfStatus::InvalidArgument, format!("capacitance must be positive, got {capacitance}")));
        }
        let inner = LumpedModel::new(seed, capacitance)?;
        *out = Box::into_raw(Box::new(LfModel { inner }));
        Ok(())
    })
}

/// Loads a model file written by `lumpfit fit` or [`lf_model_save`].
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lf_model_load(path: *const c_char, out: *mut *mut LfModel) -> LfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = LumpedModel::load(&path_arg(path)?)?;
        *out = Box::into_raw(Box::new(LfModel { inner }));
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn lf_model_save(model: *const LfModel, path: *const c_char) -> LfStatus {
    guard(|| {
        let m = model_ref(model)?;
        m.save(&path_arg(path)?)?;
        Ok(())
    })
}

/// Releases a model handle. Null is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn lf_model_free(model: *mut LfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lf_model_capacitance(model: *const LfModel, out: *mut f64) -> LfStatus {
    guard(|| {
        let m = model_ref(model)?;
        *out.as_mut().ok_or_else(|| null("out"))? = m.capacitance();
        Ok(())
    })
}

/// Learned internal heat generation at temperature `t` (°C) and power `p` (W).
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lf_model_heat_input(model: *const LfModel, t: f64, p: f64, out: *mut f64) -> LfStatus {
    guard(|| {
        let m = model_ref(model)?;
        if !t.is_finite() || !p.is_finite() {
            return Err(Fail(LfStatus::InvalidArgument, "temperature and power must be finite".into()));
        }
        *out.as_mut().ok_or_else(|| null("out"))? = m.heat_input(t, p);
        Ok(())
    })
}

/// Simulates the model on `n_points` samples `t_k = power_times[0] + k*dt`,
/// driven by the piecewise-linear power signal `(power_times, power_values)`.
///
/// # Safety
/// The power arrays must hold `n_power` values each and
/// `out_temperatures` must hold `n_points` values.
#[no_mangle]
pub unsafe extern "C" fn lf_model_simulate(
    model: *const LfModel,
    power_times: *const f64,
    power_values: *const f64,
    n_power: usize,
    t_init: f64,
    dt: f64,
    n_points: usize,
    substeps: usize,
    out_temperatures: *mut f64,
) -> LfStatus {
    guard(|| {
        let m = model_ref(model)?;
        let times = slice_arg(power_times, n_power, "power_times")?;
        let values = slice_arg(power_values, n_power, "power_values")?;
        let out = out_slice(out_temperatures, n_points, "out_temperatures")?;
        if n_points < 2 {
            return Err(Fail(LfStatus::InvalidArgument, "need at least two output points".into()));
        }
        let power = PowerSignal::new(times.to_vec(), values.to_vec())?;
        let grid = TimeGrid::with_points(times[0], dt, n_points)?;
        let traj = m.simulate(&power, t_init, &grid, &SolverConfig::fixed(substeps))?;
        out.copy_from_slice(&traj.scalar_states());
        Ok(())
    })
}

/// Heat input over an `n_t` × `n_p` grid, temperature-major, into `out_heat`.
///
/// # Safety
/// `out_heat` must hold `n_t * n_p` values.
#[no_mangle]
pub unsafe extern "C" fn lf_model_surface(
    model: *const LfModel,
    t_min: f64,
    t_max: f64,
    p_min: f64,
    p_max: f64,
    n_t: usize,
    n_p: usize,
    out_heat: *mut f64,
) -> LfStatus {
    guard(|| {
        let m = model_ref(model)?;
        let n = n_t
            .checked_mul(n_p)
            .ok_or_else(|| Fail(LfStatus::InvalidArgument, "surface too large".into()))?;
        let points = m.heat_surface((t_min, t_max), (p_min, p_max), (n_t, n_p))?;
        let out = out_slice(out_heat, n, "out_heat")?;
        for (o, p) in out.iter_mut().zip(&points) {
            *o = p.heat;
        }
        Ok(())
    })
}

/// Synthesizes a power profile that drives `model` from `t_init` to `t_set`
/// over `horizon` seconds on a `dt` grid.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lf_control_synthesize(
    model: *const LfModel,
    t_set: f64,
    p_max: f64,
    horizon: f64,
    t_init: f64,
    dt: f64,
    seed: u64,
    out: *mut *mut LfControl,
) -> LfStatus {
    guard(|| {
        let m = model_ref(model)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let problem = ControlProblem {
            t_set,
            p_max,
            horizon,
            t_init,
            dt,
        };
        let config = ControlConfig {
            seed,
            ..Default::default()
        };
        let syn = synthesize_control(m, &problem, &config)?;
        *out = Box::into_raw(Box::new(LfControl {
            times: syn.times,
            profile: syn.profile,
            temperatures: syn.temperatures,
            loss: syn.loss,
        }));
        Ok(())
    })
}

/// Number of samples in a synthesized profile; 0 for a null handle.
///
/// # Safety
/// `control` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lf_control_len(control: *const LfControl) -> usize {
    control.as_ref().map_or(0, |c| c.times.len())
}

/// # Safety
/// `control` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lf_control_loss(control: *const LfControl, out: *mut f64) -> LfStatus {
    guard(|| {
        let c = control.as_ref().ok_or_else(|| null("control"))?;
        *out.as_mut().ok_or_else(|| null("out"))? = c.loss;
        Ok(())
    })
}

/// Copies times, powers and predicted temperatures into caller buffers of
/// length `len`, which must be at least [`lf_control_len`]. Any output
/// pointer may be null to skip that series.
///
/// # Safety
/// Non-null output pointers must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn lf_control_copy(
    control: *const LfControl,
    out_times: *mut f64,
    out_power: *mut f64,
    out_temperatures: *mut f64,
    len: usize,
) -> LfStatus {
    guard(|| {
        let c = control.as_ref().ok_or_else(|| null("control"))?;
        let n = c.times.len();
        if len < n {
            return Err(Fail(LfStatus::BufferTooSmall, format!("buffer holds {len}, need {n}")));
        }
        for (src, dst) in [(&c.times, out_times), (&c.profile, out_power), (&c.temperatures, out_temperatures)] {
            if !dst.is_null() {
                std::slice::from_raw_parts_mut(dst, n).copy_from_slice(src);
            }
        }
        Ok(())
    })
}

/// Releases a control handle. Null is ignored.
///
/// # Safety
/// `control` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn lf_control_free(control: *mut LfControl) {
    if !control.is_null() {
        drop(Box::from_raw(control));
    }
}
