//! C ABI over `stochprod-core`.
//!
//! A solved model lives behind an opaque `SpSolution` handle created by
//! [`sp_solution_new`] or [`sp_solution_from_toml`] and released with
//! [`sp_solution_free`]. Every fallible call returns an [`SpStatus`]; on
//! failure a description is kept per thread and can be copied out with
//! [`sp_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use stochprod_core::commands::{solve_resolved, verify_solved, CommandError, Solved};
use stochprod_core::config::{CostKind, CostSection, MethodChoice, Resolved, RunConfig};
use stochprod_core::model::RawModelParams;
use stochprod_core::policy::policy_eval;
use stochprod_core::simulator::{monte_carlo_cost, SimConfig};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpStatus {
    Ok = 0,
    NullPointer = 1,
    /// Bad parameters, cost, grid or config text.
    InvalidInput = 2,
    /// Solver, simulation or other numerical failure.
    Runtime = 3,
    BufferTooSmall = 4,
    Panic = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpCostKind {
    Quadratic = 0,
    ScaledQuadratic = 1,
    Saturating = 2,
    Constant = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpMethod {
    Rk = 0,
    Picard = 1,
    /// Runs both and keeps the RK solution; the agreement shows up in
    /// [`sp_solution_verify`].
    Both = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpColumn {
    R = 0,
    U = 1,
    UPrime = 2,
    Z = 3,
    Phi = 4,
    PMagnitude = 5,
    PDemandAdjusted = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SpModel {
    pub n_goods: usize,
    pub sigma: f64,
    pub alpha: f64,
    pub radius: f64,
}

/// Only the fields used by `kind` are read.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SpCost {
    pub kind: SpCostKind,
    pub c: f64,
    pub cap: f64,
    pub c0: f64,
    pub allow_test_only: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SpSolverOptions {
    pub method: SpMethod,
    pub dr: f64,
    /// Values `<= 0` mean "stop at the radius".
    pub r_stop: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SpSimOptions {
    pub dt: f64,
    pub t_max: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub noise_off: bool,
    pub bridge_correction: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct SpMonteCarlo {
    pub n_paths: usize,
    pub mean_cost: f64,
    pub std_error: f64,
    pub fraction_stopped: f64,
    pub z_at_y0: f64,
    pub z0_boundary: f64,
    pub consistency_gap: f64,
}

/// Opaque handle to a solved model.
pub struct SpSolution {
    solved: Solved,
    resolved: Resolved,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn fail(status: SpStatus, msg: impl Into<String>) -> SpStatus {
    set_error(msg);
    status
}

fn from_command(e: CommandError) -> SpStatus {
    let status = match e.exit_code() {
        2 => SpStatus::InvalidInput,
        _ => SpStatus::Runtime,
    };
    fail(status, e.to_string())
}

fn guard(f: impl FnOnce() -> SpStatus) -> SpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => fail(SpStatus::Panic, "internal panic"),
    }
}

fn build(cfg: RunConfig) -> Result<Box<SpSolution>, SpStatus> {
    let resolved = cfg.resolve().map_err(|e| from_command(e.into()))?;
    let solved = solve_resolved(&cfg, &resolved).map_err(from_command)?;
    Ok(Box::new(SpSolution { solved, resolved }))
}

/// Solves the radial equation for the given model, cost and grid.
///
/// # Safety
/// `model`, `cost` and `solver` must be valid for reads; `out` must be valid
/// for a pointer write. On success `*out` owns a handle to be released with
/// [`sp_solution_free`].
#[no_mangle]
pub unsafe extern "C" fn sp_solution_new(
    model: *const SpModel,
    cost: *const SpCost,
    solver: *const SpSolverOptions,
    out: *mut *mut SpSolution,
) -> SpStatus {
    guard(|| {
        if model.is_null() || cost.is_null() || solver.is_null() || out.is_null() {
            return fail(SpStatus::NullPointer, "null argument");
        }
        let (m, c, s) = (&*model, &*cost, &*solver);
        let mut cfg = RunConfig {
            model: RawModelParams {
                n_goods: m.n_goods,
                sigma: m.sigma,
                alpha: m.alpha,
                radius: m.radius,
            },
            ..RunConfig::default()
        };
        cfg.cost = CostSection {
            kind: match c.kind {
                SpCostKind::Quadratic => CostKind::Quadratic,
                SpCostKind::ScaledQuadratic => CostKind::ScaledQuadratic,
                SpCostKind::Saturating => CostKind::Saturating,
                SpCostKind::Constant => CostKind::Constant,
            },
            c: matches!(c.kind, SpCostKind::ScaledQuadratic | SpCostKind::Saturating).then_some(c.c),
            cap: (c.kind == SpCostKind::Saturating).then_some(c.cap),
            c0: (c.kind == SpCostKind::Constant).then_some(c.c0),
            allow_test_only: c.allow_test_only,
        };
        cfg.solver.method = match s.method {
            SpMethod::Rk => MethodChoice::Rk,
            SpMethod::Picard => MethodChoice::Picard,
            SpMethod::Both => MethodChoice::Both,
        };
        cfg.solver.dr = s.dr;
        cfg.solver.r_stop = (s.r_stop > 0.0).then_some(s.r_stop);
        cfg.sim.y0 = None;
        match build(cfg) {
            Ok(h) => {
                *out = Box::into_raw(h);
                SpStatus::Ok
            }
            Err(status) => status,
        }
    })
}

/// Like [`sp_solution_new`], reading everything from a TOML config.
///
/// # Safety
/// `toml` must be a NUL-terminated string; `out` must be valid for a
/// pointer write.
#[no_mangle]
pub unsafe extern "C" fn sp_solution_from_toml(toml: *const c_char, out: *mut *mut SpSolution) -> SpStatus {
    guard(|| {
        if toml.is_null() || out.is_null() {
            return fail(SpStatus::NullPointer, "null argument");
        }
        let text = match CStr::from_ptr(toml).to_str() {
            Ok(t) => t,
            Err(_) => return fail(SpStatus::InvalidInput, "config is not UTF-8"),
        };
        let cfg = match RunConfig::from_toml(text) {
            Ok(cfg) => cfg,
            Err(e) => return from_command(e.into()),
        };
        match build(cfg) {
            Ok(h) => {
                *out = Box::into_raw(h);
                SpStatus::Ok
            }
            Err(status) => status,
        }
    })
}

/// # Safety
/// `handle` must be null or come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn sp_solution_free(handle: *mut SpSolution) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Number of grid nodes, 0 for a null handle.
///
/// # Safety
/// `handle` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sp_solution_len(handle: *const SpSolution) -> usize {
    handle.as_ref().map_or(0, |h| h.solved.solution.u.len())
}

/// Boundary value `Z0 = z(R)`.
///
/// # Safety
/// `handle` must be a live handle and `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn sp_solution_z0(handle: *const SpSolution, out: *mut f64) -> SpStatus {
    let (Some(h), false) = (handle.as_ref(), out.is_null()) else {
        return fail(SpStatus::NullPointer, "null argument");
    };
    *out = h.solved.value.z0_boundary;
    SpStatus::Ok
}

/// Copies one column of the solution table into `buf`, which must hold at
/// least [`sp_solution_len`] values.
///
/// # Safety
/// `buf` must be valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn sp_solution_column(
    handle: *const SpSolution,
    column: SpColumn,
    buf: *mut f64,
    len: usize,
) -> SpStatus {
    let (Some(h), false) = (handle.as_ref(), buf.is_null()) else {
        return fail(SpStatus::NullPointer, "null argument");
    };
    let s = &h.solved;
    let src: &[f64] = match column {
        SpColumn::R => s.solution.nodes(),
        SpColumn::U => &s.solution.u,
        SpColumn::UPrime => &s.solution.u_prime,
        SpColumn::Z => &s.value.z,
        SpColumn::Phi => &s.phi.phi,
        SpColumn::PMagnitude => &s.policy.magnitude,
        SpColumn::PDemandAdjusted => &s.policy.demand_adjusted,
    };
    if len < src.len() {
        return fail(
            SpStatus::BufferTooSmall,
            format!("buffer holds {len} values, column has {}", src.len()),
        );
    }
    ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
    SpStatus::Ok
}

/// Value function at the state `y` (length `n`); states on or outside the
/// sphere give `Z0`.
///
/// # Safety
/// `y` must be valid for `n` reads and `out` for a write.
#[no_mangle]
pub unsafe extern "C" fn sp_solution_value(
    handle: *const SpSolution,
    y: *const f64,
    n: usize,
    out: *mut f64,
) -> SpStatus {
    guard(|| {
        let (Some(h), false, false) = (handle.as_ref(), y.is_null(), out.is_null()) else {
            return fail(SpStatus::NullPointer, "null argument");
        };
        let y = std::slice::from_raw_parts(y, n);
        if n != h.solved.params.n_goods() {
            return fail(
                SpStatus::InvalidInput,
                format!("state has {n} entries, model has {} goods", h.solved.params.n_goods()),
            );
        }
        match h.solved.value_at_state(y) {
            Ok(v) => {
                *out = v;
                SpStatus::Ok
            }
            Err(e) => from_command(e),
        }
    })
}

/// Optimal production rates at `y` (length `n`), written to `out` (length
/// `n`).
///
/// # Safety
/// `y` must be valid for `n` reads and `out` for `n` writes.
#[no_mangle]
pub unsafe extern "C" fn sp_solution_policy(
    handle: *const SpSolution,
    y: *const f64,
    n: usize,
    out: *mut f64,
) -> SpStatus {
    guard(|| {
        let (Some(h), false, false) = (handle.as_ref(), y.is_null(), out.is_null()) else {
            return fail(SpStatus::NullPointer, "null argument");
        };
        let y = std::slice::from_raw_parts(y, n);
        match policy_eval(&h.solved.policy, y) {
            Ok(p) => {
                ptr::copy_nonoverlapping(p.as_ptr(), out, n);
                SpStatus::Ok
            }
            Err(e) => from_command(e.into()),
        }
    })
}

/// Runs the invariant checks. `*pass` is set even when some checks fail;
/// the names of failed checks are then available from
/// [`sp_last_error_message`].
///
/// # Safety
/// `handle` must be a live handle and `pass` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn sp_solution_verify(handle: *const SpSolution, pass: *mut bool) -> SpStatus {
    guard(|| {
        let (Some(h), false) = (handle.as_ref(), pass.is_null()) else {
            return fail(SpStatus::NullPointer, "null argument");
        };
        match verify_solved(&h.solved, &h.resolved) {
            Ok(report) => {
                *pass = report.overall_pass;
                if !report.overall_pass {
                    set_error(format!("failed checks: {}", report.failures().join(", ")));
                }
                SpStatus::Ok
            }
            Err(e) => from_command(e),
        }
    })
}

/// Monte Carlo estimate of the expected cost from `y0` (length `n`).
///
/// # Safety
/// `opts` must be valid for reads, `y0` for `n` reads and `out` for a write.
#[no_mangle]
pub unsafe extern "C" fn sp_solution_monte_carlo(
    handle: *const SpSolution,
    opts: *const SpSimOptions,
    y0: *const f64,
    n: usize,
    out: *mut SpMonteCarlo,
) -> SpStatus {
    guard(|| {
        let (Some(h), Some(o), false, false) = (handle.as_ref(), opts.as_ref(), y0.is_null(), out.is_null())
        else {
            return fail(SpStatus::NullPointer, "null argument");
        };
        let y0 = std::slice::from_raw_parts(y0, n).to_vec();
        let cfg = SimConfig {
            dt: o.dt,
            t_max: o.t_max,
            n_paths: o.n_paths,
            seed: o.seed,
            y0,
            noise_off: o.noise_off,
            bridge_correction: o.bridge_correction,
        };
        let s = &h.solved;
        let est = match monte_carlo_cost(&s.policy, &s.params, &s.cost, &cfg) {
            Ok(est) => est,
            Err(e) => return from_command(e.into()),
        };
        let z_at_y0 = match s.value_at_state(&cfg.y0) {
            Ok(v) => v,
            Err(e) => return from_command(e),
        };
        let z0 = s.value.z0_boundary;
        *out = SpMonteCarlo {
            n_paths: est.n_paths,
            mean_cost: est.mean_cost,
            std_error: est.std_error,
            fraction_stopped: est.fraction_stopped,
            z_at_y0,
            z0_boundary: z0,
            consistency_gap: est.mean_cost - (z_at_y0 - z0),
        };
        SpStatus::Ok
    })
}

/// Length in bytes of the last error message on this thread, excluding the
/// terminating NUL.
#[no_mangle]
pub extern "C" fn sp_last_error_length() -> usize {
    LAST_ERROR.with(|e| e.borrow().len())
}

/// Copies the last error message on this thread into `buf` as a
/// NUL-terminated string. Needs `sp_last_error_length() + 1` bytes.
///
/// # Safety
/// `buf` must be valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn sp_last_error_message(buf: *mut c_char, len: usize) -> SpStatus {
    if buf.is_null() {
        return SpStatus::NullPointer;
    }
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if len < msg.len() + 1 {
            return SpStatus::BufferTooSmall;
        }
        ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, msg.len());
        *buf.add(msg.len()) = 0;
        SpStatus::Ok
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
