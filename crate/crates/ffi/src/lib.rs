//! C interface to the poisson-stop solver.
//!
//! Every fallible call returns a [`PsStatus`]; on failure the message is
//! available from [`ps_last_error`] on the same thread. Handles are opaque
//! and owned by the caller, who releases them with the matching `*_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use poisson_stop::mc::{estimate_g, McError, McSettings};
use poisson_stop::model::{bundled, ModelError, ProblemSpec};
use poisson_stop::solver::{value_iteration, Grid, IterationReport, IterationScheme, SolverError, SolverSettings, Spacing, Validation, ValueFunction};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsStatus {
    Ok = 0,
    NullPointer = 1,
    /// A string argument is not valid UTF-8.
    InvalidString = 2,
    /// The problem could not be read, parsed or constructed.
    InvalidProblem = 3,
    /// The problem fails its standing assumptions.
    AssumptionFailed = 4,
    Solver = 5,
    Simulation = 6,
    InvalidArgument = 7,
    BufferTooSmall = 8,
    Panic = 99,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsSpacing {
    /// Chosen from the problem's interval and endpoint kinds.
    Auto = 0,
    Uniform = 1,
    Logarithmic = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct PsSolveOptions {
    pub grid_nodes: usize,
    pub spacing: PsSpacing,
    pub tol: f64,
    pub max_iterations: usize,
    /// Switch to policy iteration after `warmup` sweeps.
    pub accelerated: bool,
    pub warmup: usize,
    /// Downgrade failed assumptions to warnings.
    pub acknowledge: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct PsEstimate {
    pub direct_mean: f64,
    pub direct_std_error: f64,
    pub time_changed_mean: f64,
    pub time_changed_std_error: f64,
}

pub struct PsProblem {
    inner: ProblemSpec,
}

pub struct PsValueFunction {
    value: ValueFunction,
    report: IterationReport,
}

struct Failure {
    status: PsStatus,
    message: String,
}

impl Failure {
    fn new(status: PsStatus, message: impl Into<String>) -> Self {
        Failure {
            status,
            message: message.into(),
        }
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        Failure::new(PsStatus::InvalidProblem, e.to_string())
    }
}

impl From<SolverError> for Failure {
    fn from(e: SolverError) -> Self {
        let status = match e {
            SolverError::Assumptions(_) => PsStatus::AssumptionFailed,
            SolverError::Grid(_) | SolverError::Settings(_) => PsStatus::InvalidArgument,
            _ => PsStatus::Solver,
        };
        Failure::new(status, e.to_string())
    }
}

impl From<McError> for Failure {
    fn from(e: McError) -> Self {
        let status = match e {
            McError::Assumptions(_) => PsStatus::AssumptionFailed,
            _ => PsStatus::Simulation,
        };
        Failure::new(status, e.to_string())
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PsStatus {
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|payload| {
        let msg = payload
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "unknown panic".into());
        Err(Failure::new(PsStatus::Panic, format!("panic: {msg}")))
    });
    match outcome {
        Ok(()) => PsStatus::Ok,
        Err(f) => {
            set_last_error(&f.message);
            f.status
        }
    }
}

unsafe fn str_arg<'a>(s: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if s.is_null() {
        return Err(Failure::new(PsStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|e| Failure::new(PsStatus::InvalidString, format!("{what}: {e}")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure::new(PsStatus::NullPointer, format!("{what} is null")))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| Failure::new(PsStatus::NullPointer, format!("{what} is null")))
}

unsafe fn emit_problem(out: *mut *mut PsProblem, p: ProblemSpec) -> Result<(), Failure> {
    *out_arg(out, "out")? = Box::into_raw(Box::new(PsProblem { inner: p }));
    Ok(())
}

/// Message for the last failed call on this thread; empty if none. Valid
/// until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ps_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Static version string.
#[no_mangle]
pub extern "C" fn ps_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses a problem from its JSON text.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn ps_problem_from_json(json: *const c_char, out: *mut *mut PsProblem) -> PsStatus {
    guard(|| {
        let text = str_arg(json, "json")?;
        emit_problem(out, ProblemSpec::from_json(text)?)
    })
}

/// Reads a problem file, or a bundled example when no such file exists.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn ps_problem_load(path: *const c_char, out: *mut *mut PsProblem) -> PsStatus {
    guard(|| {
        let spec = str_arg(path, "path")?;
        let p = if Path::new(spec).exists() {
            ProblemSpec::load(spec)?
        } else {
            match bundled(spec) {
                Some(p) => p?,
                None => return Err(Failure::new(PsStatus::InvalidProblem, format!("no problem file or bundled example named {spec:?}"))),
            }
        };
        emit_problem(out, p)
    })
}

/// # Safety
/// `p` must be null or a handle from `ps_problem_*` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ps_problem_free(p: *mut PsProblem) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Problem as JSON; release with `ps_string_free`. Null on failure.
///
/// # Safety
/// `p` must be a live problem handle.
#[no_mangle]
pub unsafe extern "C" fn ps_problem_to_json(p: *const PsProblem) -> *mut c_char {
    let mut text = std::ptr::null_mut();
    guard(|| {
        let json = ref_arg(p, "problem")?.inner.to_json()?;
        text = CString::new(json).map_err(|e| Failure::new(PsStatus::InvalidString, e.to_string()))?.into_raw();
        Ok(())
    });
    text
}

/// # Safety
/// `s` must be null or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn ps_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

#[no_mangle]
pub extern "C" fn ps_solve_options_default() -> PsSolveOptions {
    let s = SolverSettings::default();
    PsSolveOptions {
        grid_nodes: 2001,
        spacing: PsSpacing::Auto,
        tol: s.tol,
        max_iterations: s.max_iterations,
        accelerated: false,
        warmup: 50,
        acknowledge: false,
    }
}

/// Value iteration on a grid built from the options.
///
/// # Safety
/// `p` must be a live problem handle, `opts` null (defaults) or valid, and
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ps_solve(p: *const PsProblem, opts: *const PsSolveOptions, out: *mut *mut PsValueFunction) -> PsStatus {
    guard(|| {
        let p = &ref_arg(p, "problem")?.inner;
        let o = opts.as_ref().copied().unwrap_or_else(|| ps_solve_options_default());
        let out = out_arg(out, "out")?;
        let spacing = match o.spacing {
            PsSpacing::Auto => None,
            PsSpacing::Uniform => Some(Spacing::Uniform),
            PsSpacing::Logarithmic => Some(Spacing::Logarithmic),
        };
        let grid = Grid::for_problem(p, o.grid_nodes, spacing)?;
        let s = SolverSettings {
            tol: o.tol,
            max_iterations: o.max_iterations,
            scheme: if o.accelerated {
                IterationScheme::Accelerated { warmup: o.warmup }
            } else {
                IterationScheme::Plain
            },
            validation: if o.acknowledge { Validation::Acknowledge } else { Validation::Require },
            ..Default::default()
        };
        let (value, report) = value_iteration(p, &grid, &s)?;
        *out = Box::into_raw(Box::new(PsValueFunction { value, report }));
        Ok(())
    })
}

/// # Safety
/// `v` must be null or a handle from `ps_solve` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ps_value_free(v: *mut PsValueFunction) {
    if !v.is_null() {
        drop(Box::from_raw(v));
    }
}

/// Interpolated value at `x`.
///
/// # Safety
/// `v` must be a live value handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ps_value_eval(v: *const PsValueFunction, x: f64, out: *mut f64) -> PsStatus {
    guard(|| {
        let v = ref_arg(v, "value")?;
        if x.is_nan() {
            return Err(Failure::new(PsStatus::InvalidArgument, "x is NaN"));
        }
        *out_arg(out, "out")? = v.value.eval(x);
        Ok(())
    })
}

/// Number of grid nodes; zero for a null handle.
///
/// # Safety
/// `v` must be null or a live value handle.
#[no_mangle]
pub unsafe extern "C" fn ps_value_len(v: *const PsValueFunction) -> usize {
    v.as_ref().map_or(0, |v| v.value.nodes().len())
}

/// Copies nodes and values into caller buffers of length `len`; either
/// buffer may be null to skip it.
///
/// # Safety
/// Non-null buffers must hold at least `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ps_value_copy(v: *const PsValueFunction, nodes: *mut f64, values: *mut f64, len: usize) -> PsStatus {
    guard(|| {
        let v = ref_arg(v, "value")?;
        let n = v.value.nodes().len();
        if len < n {
            return Err(Failure::new(PsStatus::BufferTooSmall, format!("buffer holds {len}, need {n}")));
        }
        for (src, dst) in [(v.value.nodes(), nodes), (v.value.values(), values)] {
            if !dst.is_null() {
                std::slice::from_raw_parts_mut(dst, n).copy_from_slice(src);
            }
        }
        Ok(())
    })
}

/// # Safety
/// `v` must be null or a live value handle.
#[no_mangle]
pub unsafe extern "C" fn ps_value_converged(v: *const PsValueFunction) -> bool {
    v.as_ref().is_some_and(|v| v.report.converged)
}

/// Iteration report as JSON; release with `ps_string_free`. Null on failure.
///
/// # Safety
/// `v` must be a live value handle.
#[no_mangle]
pub unsafe extern "C" fn ps_value_report_json(v: *const PsValueFunction) -> *mut c_char {
    let mut text = std::ptr::null_mut();
    guard(|| {
        let v = ref_arg(v, "value")?;
        let json = serde_json::to_string(&v.report).map_err(|e| Failure::new(PsStatus::Solver, e.to_string()))?;
        text = CString::new(json).map_err(|e| Failure::new(PsStatus::InvalidString, e.to_string()))?.into_raw();
        Ok(())
    });
    text
}

/// Direct and time-changed Monte Carlo estimates of the first-arrival value
/// at `x`. A non-positive `dt` keeps the default step.
///
/// # Safety
/// `p` must be a live problem handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ps_estimate_first_arrival(
    p: *const PsProblem,
    x: f64,
    n_paths: usize,
    dt: f64,
    seed: u64,
    out: *mut PsEstimate,
) -> PsStatus {
    guard(|| {
        let p = &ref_arg(p, "problem")?.inner;
        let out = out_arg(out, "out")?;
        let mut s = McSettings {
            n_paths,
            seed,
            ..Default::default()
        };
        if dt > 0.0 {
            s.dt = dt;
        }
        let g = estimate_g(p, x, &s)?;
        *out = PsEstimate {
            direct_mean: g.direct.mean,
            direct_std_error: g.direct.std_error,
            time_changed_mean: g.time_changed.mean,
            time_changed_std_error: g.time_changed.std_error,
        };
        Ok(())
    })
}
