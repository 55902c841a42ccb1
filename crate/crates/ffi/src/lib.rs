//! C ABI for the asyncsgd simulator.
//!
//! Conventions:
//!
//! * Every fallible function returns an [`AsgdStatus`]; results go through
//!   out-pointers. On failure the out-pointers are left untouched and
//!   [`asgd_last_error_message`] describes the error.
//! * Objects are opaque handles created by `*_new` / `*_from_*` functions and
//!   released with the matching `*_free`.
//! * Strings returned by the library are NUL-terminated UTF-8 and must be
//!   released with [`asgd_string_free`].
//! * Panics never cross the boundary; they surface as [`AsgdStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use asyncsgd::cli::config::ExperimentConfig;
use asyncsgd::cli::experiment::Prepared;
use asyncsgd::cli::simulate::{run_simulate, SimulateOutput};
use asyncsgd::engine::{RunStatus, RunTrace};
use asyncsgd::objectives::{make_logistic, make_quadratic, AnyObjective, Objective};
use asyncsgd::speedup::{async_time, minibatch_time, speedup_ratio, SpeedupInput};
use asyncsgd::stepsize::theoretical_eta_thm1;
use asyncsgd::{Error, MasterSeed};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AsgdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    InvalidConfig = 4,
    NumericDomain = 5,
    SimulationError = 6,
    IdentityViolation = 7,
    UndefinedStatistic = 8,
    TuningFailed = 9,
    Serialization = 10,
    Io = 11,
    IndexOutOfRange = 12,
    Panic = 13,
}

/// How a simulation ended.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AsgdRunStatus {
    Completed = 0,
    Converged = 1,
    NotConverged = 2,
    Diverged = 3,
}

impl From<RunStatus> for AsgdRunStatus {
    fn from(s: RunStatus) -> Self {
        match s {
            RunStatus::Completed => AsgdRunStatus::Completed,
            RunStatus::Converged => AsgdRunStatus::Converged,
            RunStatus::NotConverged => AsgdRunStatus::NotConverged,
            RunStatus::Diverged => AsgdRunStatus::Diverged,
        }
    }
}

/// One applied gradient.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AsgdRecord {
    pub t: u64,
    pub worker: u64,
    pub client: u64,
    pub tau: u64,
    pub eta: f64,
    pub grad_norm: f64,
    pub f_value: f64,
    pub sim_time: f64,
    pub selected: u64,
    pub concurrency: u64,
}

/// Expected wall times of asynchronous and mini-batch SGD.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AsgdSpeedup {
    pub async_time: f64,
    pub minibatch_time: f64,
    pub ratio: f64,
}

/// Opaque objective handle.
pub struct AsgdObjective {
    inner: AnyObjective,
}

/// Opaque handle to a finished simulation.
pub struct AsgdTrace {
    trace: RunTrace,
    output: SimulateOutput,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(AsgdStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::InvalidSpec(_) => AsgdStatus::InvalidArgument,
            Error::InvalidConfig { .. } => AsgdStatus::InvalidConfig,
            Error::NumericDomain(_) => AsgdStatus::NumericDomain,
            Error::Deadlock { .. } | Error::BusyWorkerSelected { .. } | Error::Overflow => AsgdStatus::SimulationError,
            Error::IdentityViolation { .. } => AsgdStatus::IdentityViolation,
            Error::UndefinedStatistic(_) => AsgdStatus::UndefinedStatistic,
            Error::TuningFailed { .. } => AsgdStatus::TuningFailed,
            Error::Serialization(_) => AsgdStatus::Serialization,
            Error::Io(_) => AsgdStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

fn fail(status: AsgdStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> AsgdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            AsgdStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(format!("internal panic: {msg}"));
            AsgdStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(fail(AsgdStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| fail(AsgdStatus::InvalidUtf8, format!("{what}: {e}")))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(AsgdStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| fail(AsgdStatus::NullPointer, format!("{what} is null")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| fail(AsgdStatus::NullPointer, format!("{what} is null")))
}

fn c_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|e| fail(AsgdStatus::Serialization, e.to_string()))
}

/// Message of the last failed call on this thread, or NULL after a successful
/// call. The pointer stays valid until the next call into the library on the
/// same thread; do not free it.
#[no_mangle]
pub extern "C" fn asgd_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by the library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn asgd_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// `f(x) = ½‖Ax − b‖²` with the spectrum of `A` equally spaced in
/// `[lambda_min, lambda_max]`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn asgd_objective_quadratic_new(
    dim: usize,
    lambda_min: f64,
    lambda_max: f64,
    seed: u64,
    out: *mut *mut AsgdObjective,
) -> AsgdStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let q = make_quadratic(dim, lambda_min, lambda_max, MasterSeed(seed))?;
        *out = Box::into_raw(Box::new(AsgdObjective {
            inner: AnyObjective::Quadratic(q),
        }));
        Ok(())
    })
}

/// Logistic regression over `m` synthetic samples in `dim` dimensions.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn asgd_objective_logistic_new(
    m: usize,
    dim: usize,
    seed: u64,
    out: *mut *mut AsgdObjective,
) -> AsgdStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let l = make_logistic(m, dim, MasterSeed(seed))?;
        *out = Box::into_raw(Box::new(AsgdObjective {
            inner: AnyObjective::Logistic(l),
        }));
        Ok(())
    })
}

/// Loads an objective from its JSON document.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn asgd_objective_from_json(json: *const c_char, out: *mut *mut AsgdObjective) -> AsgdStatus {
    guard(|| {
        let text = str_arg(json, "json")?;
        let out = out_arg(out, "out")?;
        let inner = AnyObjective::from_json(text)?;
        *out = Box::into_raw(Box::new(AsgdObjective { inner }));
        Ok(())
    })
}

/// Serialises an objective to JSON; free the result with [`asgd_string_free`].
///
/// # Safety
/// `obj` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn asgd_objective_to_json(obj: *const AsgdObjective, out: *mut *mut c_char) -> AsgdStatus {
    guard(|| {
        let obj = handle(obj, "objective")?;
        let out = out_arg(out, "out")?;
        *out = c_string(obj.inner.to_json()?)?;
        Ok(())
    })
}

/// Dimension of the parameter space, 0 for a NULL handle.
///
/// # Safety
/// `obj` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn asgd_objective_dim(obj: *const AsgdObjective) -> usize {
    obj.as_ref().map_or(0, |o| o.inner.dim())
}

/// Number of client functions (1 for homogeneous objectives), 0 for NULL.
///
/// # Safety
/// `obj` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn asgd_objective_num_clients(obj: *const AsgdObjective) -> usize {
    obj.as_ref().map_or(0, |o| o.inner.num_clients())
}

/// Smoothness constant `L`, NaN for a NULL handle.
///
/// # Safety
/// `obj` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn asgd_objective_smoothness(obj: *const AsgdObjective) -> f64 {
    obj.as_ref().map_or(f64::NAN, |o| o.inner.smoothness())
}

fn check_point(obj: &AsgdObjective, x: &[f64]) -> Result<(), Failure> {
    if x.len() != obj.inner.dim() {
        return Err(fail(
            AsgdStatus::InvalidArgument,
            format!("point has length {}, objective dimension is {}", x.len(), obj.inner.dim()),
        ));
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(fail(AsgdStatus::NumericDomain, "point is not finite"));
    }
    Ok(())
}

/// `f(x)`.
///
/// # Safety
/// `obj` must be a live handle, `x` must point to `len` doubles and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn asgd_objective_value(
    obj: *const AsgdObjective,
    x: *const f64,
    len: usize,
    out: *mut f64,
) -> AsgdStatus {
    guard(|| {
        let obj = handle(obj, "objective")?;
        let x = slice_arg(x, len, "x")?;
        let out = out_arg(out, "out")?;
        check_point(obj, x)?;
        *out = obj.inner.value(x);
        Ok(())
    })
}

/// `∇f(x)` written to `grad` (`len` doubles).
///
/// # Safety
/// `obj` must be a live handle; `x` and `grad` must each point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn asgd_objective_gradient(
    obj: *const AsgdObjective,
    x: *const f64,
    len: usize,
    grad: *mut f64,
) -> AsgdStatus {
    guard(|| {
        let obj = handle(obj, "objective")?;
        let x = slice_arg(x, len, "x")?;
        check_point(obj, x)?;
        if grad.is_null() {
            return Err(fail(AsgdStatus::NullPointer, "grad is null"));
        }
        let g = std::slice::from_raw_parts_mut(grad, len);
        obj.inner.gradient_into(x, g);
        Ok(())
    })
}

/// Releases an objective. NULL is ignored.
///
/// # Safety
/// `obj` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn asgd_objective_free(obj: *mut AsgdObjective) {
    if !obj.is_null() {
        drop(Box::from_raw(obj));
    }
}

/// Runs the experiment described by a JSON config (the schema of the
/// `simulate` command). Relative paths in the config resolve against
/// `base_dir`, or the working directory when it is NULL. A run that misses
/// its accuracy target still succeeds; query [`asgd_trace_status`].
///
/// # Safety
/// `config_json` must be a NUL-terminated string, `base_dir` NULL or one, and
/// `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn asgd_simulate(
    config_json: *const c_char,
    base_dir: *const c_char,
    out: *mut *mut AsgdTrace,
) -> AsgdStatus {
    guard(|| {
        let text = str_arg(config_json, "config_json")?;
        let base = if base_dir.is_null() { "." } else { str_arg(base_dir, "base_dir")? };
        let out = out_arg(out, "out")?;
        let cfg = ExperimentConfig::from_json(text)?;
        let prepared = Prepared::new(cfg, Path::new(base))?;
        let r = run_simulate(&prepared)?;
        *out = Box::into_raw(Box::new(AsgdTrace {
            trace: r.trace,
            output: r.output,
        }));
        Ok(())
    })
}

/// Number of applied gradients `T`, 0 for NULL.
///
/// # Safety
/// `trace` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn asgd_trace_len(trace: *const AsgdTrace) -> u64 {
    trace.as_ref().map_or(0, |t| t.trace.iterations())
}

/// How the run ended.
///
/// # Safety
/// `trace` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn asgd_trace_status(trace: *const AsgdTrace, out: *mut AsgdRunStatus) -> AsgdStatus {
    guard(|| {
        let t = handle(trace, "trace")?;
        *out_arg(out, "out")? = t.trace.status.into();
        Ok(())
    })
}

/// The record of iteration `index`.
///
/// # Safety
/// `trace` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn asgd_trace_record(trace: *const AsgdTrace, index: u64, out: *mut AsgdRecord) -> AsgdStatus {
    guard(|| {
        let t = handle(trace, "trace")?;
        let out = out_arg(out, "out")?;
        let r = usize::try_from(index)
            .ok()
            .and_then(|i| t.trace.records.get(i))
            .ok_or_else(|| fail(AsgdStatus::IndexOutOfRange, format!("record {index} of {}", t.trace.iterations())))?;
        *out = AsgdRecord {
            t: r.t,
            worker: r.worker as u64,
            client: r.client as u64,
            tau: r.tau,
            eta: r.eta,
            grad_norm: r.grad_norm,
            f_value: r.f_value,
            sim_time: r.sim_time,
            selected: r.selected as u64,
            concurrency: r.concurrency as u64,
        };
        Ok(())
    })
}

/// Copies the final iterate into `x` (`len` must equal the dimension).
///
/// # Safety
/// `trace` must be a live handle and `x` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn asgd_trace_final_point(trace: *const AsgdTrace, x: *mut f64, len: usize) -> AsgdStatus {
    guard(|| {
        let t = handle(trace, "trace")?;
        let p = &t.trace.final_point;
        if len != p.len() {
            return Err(fail(AsgdStatus::InvalidArgument, format!("buffer has length {len}, iterate has {}", p.len())));
        }
        if x.is_null() {
            return Err(fail(AsgdStatus::NullPointer, "x is null"));
        }
        std::slice::from_raw_parts_mut(x, len).copy_from_slice(p);
        Ok(())
    })
}

/// The metrics document the `simulate` command writes.
///
/// # Safety
/// `trace` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn asgd_trace_metrics_json(trace: *const AsgdTrace, out: *mut *mut c_char) -> AsgdStatus {
    guard(|| {
        let t = handle(trace, "trace")?;
        let out = out_arg(out, "out")?;
        *out = c_string(t.output.to_json()?)?;
        Ok(())
    })
}

/// The per-iteration CSV the `simulate` command writes.
///
/// # Safety
/// `trace` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn asgd_trace_csv(trace: *const AsgdTrace, out: *mut *mut c_char) -> AsgdStatus {
    guard(|| {
        let t = handle(trace, "trace")?;
        let out = out_arg(out, "out")?;
        *out = c_string(t.trace.to_csv_string()?)?;
        Ok(())
    })
}

/// Releases a trace. NULL is ignored.
///
/// # Safety
/// `trace` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn asgd_trace_free(trace: *mut AsgdTrace) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}

/// Expected time for `tau_c` gradients: asynchronous (mean of `deltas`) and
/// mini-batch (expected maximum of `tau_c` uniform draws).
///
/// # Safety
/// `deltas` must point to `n` doubles and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn asgd_speedup(deltas: *const f64, n: usize, tau_c: u32, out: *mut AsgdSpeedup) -> AsgdStatus {
    guard(|| {
        let d = slice_arg(deltas, n, "deltas")?;
        let out = out_arg(out, "out")?;
        let input = SpeedupInput::new(d.to_vec(), tau_c)?;
        *out = AsgdSpeedup {
            async_time: async_time(&input),
            minibatch_time: minibatch_time(&input),
            ratio: speedup_ratio(&input),
        };
        Ok(())
    })
}

/// `min{ 1/(2L√(τ_max τ_C)), √(r₀ / (2Lσ²(T+1))) }`.
#[no_mangle]
pub extern "C" fn asgd_theoretical_eta(l: f64, tau_max: u64, tau_c: u64, sigma: f64, r0: f64, horizon: u64) -> f64 {
    theoretical_eta_thm1(l, tau_max, tau_c, sigma, r0, horizon)
}
