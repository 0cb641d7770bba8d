//! C interface to the `rbsde` solver.
//!
//! Every function returns an [`RbsdeStatus`]; on failure a description is
//! available from [`rbsde_last_error`] on the calling thread. Objects are
//! opaque handles created by `*_new`/`*_from_*` functions and released with
//! the matching `*_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use rbsde::bsde::{backward_solve_unconstrained, BackwardSolution, RegressionBasis, Scenario};
use rbsde::config::{builtin_source, ScenarioFile, DEFAULT_STEPS};
use rbsde::harness::{emit_report, run_sweep, SweepPlan};
use rbsde::penalty::{backward_solve_penalized, penalty_metrics, PenaltyLevel, PenaltyMetrics};
use rbsde::Error;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RbsdeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Numerical = 4,
    Io = 5,
    Panic = 6,
}

/// Validated problem description.
pub struct RbsdeScenario {
    inner: Scenario,
}

/// Solution of one solve together with its error functionals.
pub struct RbsdeSolution {
    inner: BackwardSolution,
    metrics: PenaltyMetrics,
}

/// Monte Carlo estimates and standard errors.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RbsdeMetrics {
    pub sup_dist_sq: f64,
    pub sup_dist_sq_stderr: f64,
    pub int_dist_sq: f64,
    pub int_dist_sq_stderr: f64,
    pub tv_lambda: f64,
    pub tv_lambda_stderr: f64,
    pub sup_y_sq: f64,
    pub sup_y_sq_stderr: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn status_of(e: &Error) -> RbsdeStatus {
    match e {
        Error::Io { .. } => RbsdeStatus::Io,
        Error::Input(_) => RbsdeStatus::InvalidArgument,
        e if e.is_numerical() => RbsdeStatus::Numerical,
        _ => RbsdeStatus::Config,
    }
}

fn guard(f: impl FnOnce() -> Result<(), RbsdeStatus>) -> RbsdeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RbsdeStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic");
            RbsdeStatus::Panic
        }
    }
}

fn fail(e: Error) -> RbsdeStatus {
    set_error(e.to_string());
    status_of(&e)
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, RbsdeStatus> {
    if p.is_null() {
        set_error(format!("{what} is null"));
        return Err(RbsdeStatus::NullPointer);
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_error(format!("{what} is not valid UTF-8"));
        RbsdeStatus::InvalidArgument
    })
}

fn null(what: &str) -> RbsdeStatus {
    set_error(format!("{what} is null"));
    RbsdeStatus::NullPointer
}

/// Message of the last failed call on this thread (empty if none). The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn rbsde_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rbsde_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

fn scenario_from_text(text: &str, label: &str, steps: usize) -> Result<Scenario, Error> {
    let file = ScenarioFile::parse(text)?;
    let steps = if steps == 0 {
        file.steps.unwrap_or(DEFAULT_STEPS)
    } else {
        steps
    };
    file.scenario(label, steps)
}

unsafe fn store<T>(out: *mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

/// Loads a built-in scenario. `steps == 0` keeps the scenario's own step count.
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rbsde_scenario_from_builtin(
    name: *const c_char,
    steps: usize,
    out: *mut *mut RbsdeScenario,
) -> RbsdeStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let name = str_arg(name, "name")?;
        let text = builtin_source(name).ok_or_else(|| {
            set_error(format!("unknown scenario `{name}`"));
            RbsdeStatus::Config
        })?;
        let inner = scenario_from_text(text, name, steps).map_err(fail)?;
        store(out, RbsdeScenario { inner });
        Ok(())
    })
}

/// Parses a scenario from TOML text.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rbsde_scenario_from_toml(
    toml: *const c_char,
    steps: usize,
    out: *mut *mut RbsdeScenario,
) -> RbsdeStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let text = str_arg(toml, "toml")?;
        let inner = scenario_from_text(text, "scenario", steps).map_err(fail)?;
        store(out, RbsdeScenario { inner });
        Ok(())
    })
}

/// # Safety
/// `scenario` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rbsde_scenario_free(scenario: *mut RbsdeScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Dimension of the constrained component, or 0 for a null handle.
///
/// # Safety
/// `scenario` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rbsde_scenario_dim(scenario: *const RbsdeScenario) -> usize {
    scenario.as_ref().map_or(0, |s| s.inner.dim())
}

/// Euclidean projection of `y` (length `dim`) onto the closed slice at time `t`.
///
/// # Safety
/// `y` and `out` must point to `dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn rbsde_project(
    scenario: *const RbsdeScenario,
    t: f64,
    y: *const f64,
    out: *mut f64,
    dim: usize,
) -> RbsdeStatus {
    guard(|| {
        let s = scenario.as_ref().ok_or_else(|| null("scenario"))?;
        if y.is_null() || out.is_null() {
            return Err(null("y/out"));
        }
        let y = std::slice::from_raw_parts(y, dim);
        let out = std::slice::from_raw_parts_mut(out, dim);
        s.inner.tube.project_into(t, y, out).map_err(fail)
    })
}

/// Simulates `paths` paths from `seed` and solves at penalty level `n`
/// (`n == 0` solves the unconstrained equation) with a polynomial basis of
/// total degree `basis_degree`.
///
/// # Safety
/// `scenario` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rbsde_solve(
    scenario: *const RbsdeScenario,
    paths: usize,
    seed: u64,
    n: u64,
    basis_degree: usize,
    out: *mut *mut RbsdeSolution,
) -> RbsdeStatus {
    guard(|| {
        let s = scenario.as_ref().ok_or_else(|| null("scenario"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let basis = RegressionBasis::Polynomial {
            degree: basis_degree,
        };
        let run = || -> Result<RbsdeSolution, Error> {
            let bundle = s.inner.simulate(paths, seed)?;
            let inner = if n == 0 {
                backward_solve_unconstrained(&s.inner, &bundle, basis)?
            } else {
                backward_solve_penalized(&s.inner, &bundle, basis, PenaltyLevel::new(n)?)?
            };
            let metrics = penalty_metrics(&inner, &s.inner.tube)?;
            Ok(RbsdeSolution { inner, metrics })
        };
        let sol = run().map_err(fail)?;
        store(out, sol);
        Ok(())
    })
}

/// # Safety
/// `solution` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rbsde_solution_free(solution: *mut RbsdeSolution) {
    if !solution.is_null() {
        drop(Box::from_raw(solution));
    }
}

/// Writes the path mean of `Y_0` into `out` (length `dim`).
///
/// # Safety
/// `out` must point to `dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn rbsde_solution_y0_mean(
    solution: *const RbsdeSolution,
    out: *mut f64,
    dim: usize,
) -> RbsdeStatus {
    guard(|| {
        let s = solution.as_ref().ok_or_else(|| null("solution"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let mean = s.inner.y0_mean();
        if dim != mean.len() {
            set_error(format!("dimension is {}, caller passed {dim}", mean.len()));
            return Err(RbsdeStatus::InvalidArgument);
        }
        ptr::copy_nonoverlapping(mean.as_ptr(), out, dim);
        Ok(())
    })
}

/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rbsde_solution_metrics(
    solution: *const RbsdeSolution,
    out: *mut RbsdeMetrics,
) -> RbsdeStatus {
    guard(|| {
        let s = solution.as_ref().ok_or_else(|| null("solution"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let m = &s.metrics;
        *out = RbsdeMetrics {
            sup_dist_sq: m.sup_dist_sq.estimate,
            sup_dist_sq_stderr: m.sup_dist_sq.stderr,
            int_dist_sq: m.int_dist_sq.estimate,
            int_dist_sq_stderr: m.int_dist_sq.stderr,
            tv_lambda: m.tv_lambda.estimate,
            tv_lambda_stderr: m.tv_lambda.stderr,
            sup_y_sq: m.sup_y_sq.estimate,
            sup_y_sq_stderr: m.sup_y_sq.stderr,
        };
        Ok(())
    })
}

/// Runs a penalty sweep and writes `report.json`, `metrics.csv` and
/// `plotdata/` into `out_dir`.
///
/// # Safety
/// `n_list` must point to `n_len` integers and `out_dir` be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn rbsde_sweep(
    scenario: *const RbsdeScenario,
    n_list: *const u64,
    n_len: usize,
    paths: usize,
    replications: usize,
    seed: u64,
    out_dir: *const c_char,
) -> RbsdeStatus {
    guard(|| {
        let s = scenario.as_ref().ok_or_else(|| null("scenario"))?;
        if n_list.is_null() && n_len > 0 {
            return Err(null("n_list"));
        }
        let dir = str_arg(out_dir, "out_dir")?;
        let levels: &[u64] = if n_len == 0 {
            &[]
        } else {
            std::slice::from_raw_parts(n_list, n_len)
        };
        let n_list = levels
            .iter()
            .map(|&n| PenaltyLevel::new(n))
            .collect::<Result<Vec<_>, _>>()
            .map_err(fail)?;
        let plan = SweepPlan {
            scenario: s.inner.clone(),
            basis: RegressionBasis::default(),
            n_list,
            paths,
            replications,
            seed_base: seed,
        };
        match run_sweep(&plan) {
            Ok(report) => emit_report(&report, Path::new(dir)).map_err(fail),
            Err(e) => {
                let _ = emit_report(&e.partial, Path::new(dir));
                Err(fail(e.source))
            }
        }
    })
}
