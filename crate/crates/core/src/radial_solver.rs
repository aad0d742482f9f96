//! Solvers for the singular radial equation
//!
//! ```text
//! u'' + (N-1)/r u' = b(r) u / sigma^4,   u(0) = alpha,  u'(0) = 0
//! ```
//!
//! Two independent routes are provided. [`solve_picard`] iterates the
//! integral (divergence) form
//!
//! ```text
//! r^(N-1) u'(r) = sigma^-4 \int_0^r s^(N-1) b(s) u(s) ds
//! ```
//!
//! with cumulative trapezoidal quadrature, and [`solve_rk`] integrates the
//! first-order system `(u, u')` with classical RK4 after a power-series start
//! at the first node. [`cross_check`] compares the two.

use std::fmt;

use thiserror::Error;

use crate::model::{CostSpec, ModelParams};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("Picard iteration did not converge after {iterations} iterations (last change {last_change:e})")]
    NoConvergence { iterations: usize, last_change: f64 },
    #[error("solution overflowed past node {node} (r = {r}); last valid node reported")]
    Overflow { node: usize, r: f64 },
    #[error("solutions live on different grids")]
    GridMismatch,
}

/// Uniform grid `0 = r_0 < r_1 < ... < r_n = r_stop`.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialGrid {
    r_stop: f64,
    step: f64,
    nodes: Vec<f64>,
}

/// Relative slack used when deciding that `r_stop / step` is an integer.
const INTEGRAL_SLACK: f64 = 1e-9;

impl RadialGrid {
    /// Builds a grid with spacing `step`. When `r_stop / step` is not an
    /// integer the spacing is shrunk to `r_stop / ceil(r_stop / step)`.
    pub fn new(r_stop: f64, step: f64) -> Result<Self, SolverError> {
        if !(r_stop.is_finite() && r_stop > 0.0) {
            return Err(SolverError::InvalidGrid(format!(
                "r_stop must be positive and finite, got {r_stop}"
            )));
        }
        if !(step.is_finite() && step > 0.0) {
            return Err(SolverError::InvalidGrid(format!(
                "step must be positive and finite, got {step}"
            )));
        }
        let ratio = r_stop / step;
        let rounded = ratio.round();
        let intervals = if (ratio - rounded).abs() <= INTEGRAL_SLACK * ratio.max(1.0) {
            rounded
        } else {
            ratio.ceil()
        };
        if intervals < 10.0 {
            return Err(SolverError::InvalidGrid(format!(
                "need at least 10 intervals, step {step} on [0, {r_stop}] gives {intervals}"
            )));
        }
        if intervals > 1e9 {
            return Err(SolverError::InvalidGrid(format!(
                "step {step} on [0, {r_stop}] needs too many nodes"
            )));
        }
        let n = intervals as usize;
        let step = r_stop / intervals;
        let mut nodes: Vec<f64> = (0..=n).map(|i| i as f64 * step).collect();
        nodes[n] = r_stop;
        Ok(Self {
            r_stop,
            step,
            nodes,
        })
    }

    pub fn r_stop(&self) -> f64 {
        self.r_stop
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Index of the node nearest to `r` (clamped to the grid).
    pub fn nearest_index(&self, r: f64) -> usize {
        let last = self.nodes.len() - 1;
        if r <= 0.0 {
            return 0;
        }
        let i = (r / self.step).round();
        if i >= last as f64 {
            last
        } else {
            i as usize
        }
    }

    /// Index of the node that coincides with `r` to within `INTEGRAL_SLACK`
    /// steps, if any.
    pub fn exact_index(&self, r: f64) -> Option<usize> {
        let i = self.nearest_index(r);
        ((self.nodes[i] - r).abs() <= INTEGRAL_SLACK * self.step.max(r)).then_some(i)
    }

    fn same_as(&self, other: &RadialGrid) -> bool {
        self.nodes.len() == other.nodes.len()
            && self.step == other.step
            && self.r_stop == other.r_stop
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverMethod {
    Picard,
    RungeKutta,
}

impl fmt::Display for SolverMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SolverMethod::Picard => f.write_str("picard"),
            SolverMethod::RungeKutta => f.write_str("rk"),
        }
    }
}

/// `u` and `u'` on a [`RadialGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct RadialSolution {
    pub grid: RadialGrid,
    pub u: Vec<f64>,
    pub u_prime: Vec<f64>,
    pub method: SolverMethod,
    /// Cost the solution was computed for; fixes the `r = 0` limits
    /// downstream.
    pub cost: CostSpec,
    /// Picard sweeps performed, or RK steps taken.
    pub iterations_or_steps: usize,
    /// Sup-norm of the ODE defect on interior nodes, with `u''` taken as the
    /// central difference of `u'`.
    pub residual: f64,
}

impl RadialSolution {
    pub fn nodes(&self) -> &[f64] {
        self.grid.nodes()
    }
}

/// Picard defaults: sup-norm tolerance and iteration cap.
pub const DEFAULT_PICARD_TOL: f64 = 1e-12;
pub const DEFAULT_PICARD_MAX_ITER: usize = 200;

/// Flux form `u'(r_i) = r_i^(1-N) sigma^-4 \int_0^{r_i} s^(N-1) b(s) u(s) ds`
/// with the cumulative trapezoid rule.
///
/// The running quantity kept is the already-divided integral
/// `J_i = r_i^(1-N) I_i`, advanced by
/// `J_i = q^(N-1) J_{i-1} + h/2 (q^(N-1) f_{i-1} + f_i)` with
/// `q = r_{i-1}/r_i <= 1`, so nothing is divided by a vanishing power of `r`.
fn flux_derivative(nodes: &[f64], source: &[f64], n_goods: usize, sigma4: f64, out: &mut [f64]) {
    let pow = (n_goods - 1) as i32;
    out[0] = 0.0;
    let mut divided = 0.0;
    for i in 1..nodes.len() {
        let h = nodes[i] - nodes[i - 1];
        let q = (nodes[i - 1] / nodes[i]).powi(pow);
        divided = q * divided + 0.5 * h * (q * source[i - 1] + source[i]);
        out[i] = divided / sigma4;
    }
}

/// `out_i = alpha + \int_0^{r_i} g` by the cumulative trapezoid rule.
fn cumulative_trapezoid(nodes: &[f64], alpha: f64, g: &[f64], out: &mut [f64]) {
    out[0] = alpha;
    let mut acc = 0.0;
    for i in 1..nodes.len() {
        acc += 0.5 * (nodes[i] - nodes[i - 1]) * (g[i - 1] + g[i]);
        out[i] = alpha + acc;
    }
}

fn ode_residual(params: &ModelParams, cost: &CostSpec, grid: &RadialGrid, u: &[f64], up: &[f64]) -> f64 {
    let nodes = grid.nodes();
    let n1 = (params.n_goods() - 1) as f64;
    let sigma4 = params.sigma4();
    let mut worst: f64 = 0.0;
    for i in 1..nodes.len().saturating_sub(1) {
        let r = nodes[i];
        let upp = (up[i + 1] - up[i - 1]) / (nodes[i + 1] - nodes[i - 1]);
        let defect = upp + n1 / r * up[i] - cost.value(r) * u[i] / sigma4;
        worst = worst.max(defect.abs());
    }
    worst
}

/// Successive approximations on the integral form, starting from `u = alpha`.
///
/// Convergence is declared when the sup-norm change between sweeps, relative
/// to the sup-norm of the new iterate, is at most `tol`.
pub fn solve_picard(
    params: &ModelParams,
    cost: &CostSpec,
    grid: &RadialGrid,
    tol: f64,
    max_iter: usize,
) -> Result<RadialSolution, SolverError> {
    if !(tol.is_finite() && tol > 0.0) || max_iter == 0 {
        return Err(SolverError::InvalidGrid(format!(
            "Picard needs tol > 0 and max_iter >= 1 (got {tol}, {max_iter})"
        )));
    }
    let nodes = grid.nodes();
    let n = nodes.len();
    let alpha = params.alpha();
    let sigma4 = params.sigma4();
    let b: Vec<f64> = nodes.iter().map(|&r| cost.value(r)).collect();

    let mut u = vec![alpha; n];
    let mut next = vec![0.0; n];
    let mut up = vec![0.0; n];
    let mut source = vec![0.0; n];
    let mut last_change = f64::INFINITY;
    let mut converged_at = None;

    for k in 1..=max_iter {
        for i in 0..n {
            source[i] = b[i] * u[i];
        }
        flux_derivative(nodes, &source, params.n_goods(), sigma4, &mut up);
        cumulative_trapezoid(nodes, alpha, &up, &mut next);

        let mut diff: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for i in 0..n {
            diff = diff.max((next[i] - u[i]).abs());
            scale = scale.max(next[i].abs());
        }
        std::mem::swap(&mut u, &mut next);
        if !scale.is_finite() {
            let node = u.iter().position(|x| !x.is_finite()).unwrap_or(n).saturating_sub(1);
            return Err(SolverError::Overflow { node, r: nodes[node] });
        }
        last_change = diff / scale;
        if last_change <= tol {
            converged_at = Some(k);
            break;
        }
    }
    let Some(iterations) = converged_at else {
        return Err(SolverError::NoConvergence {
            iterations: max_iter,
            last_change,
        });
    };

    for i in 0..n {
        source[i] = b[i] * u[i];
    }
    flux_derivative(nodes, &source, params.n_goods(), sigma4, &mut up);
    let residual = ode_residual(params, cost, grid, &u, &up);
    Ok(RadialSolution {
        grid: grid.clone(),
        u,
        u_prime: up,
        method: SolverMethod::Picard,
        cost: *cost,
        iterations_or_steps: iterations,
        residual,
    })
}

/// Number of even-power terms kept in the start-up series.
const SERIES_TERMS: usize = 6;

/// Frobenius series of the regular solution near the origin, valid while
/// `b(r) = b0 + b2 r^2`. Coefficients of `r^(2m)` obey
/// `2m (2m + N - 2) a_{2m} = sigma^-4 (b0 a_{2m-2} + b2 a_{2m-4})`.
fn series_start(params: &ModelParams, cost: &CostSpec, r: f64) -> (f64, f64) {
    let (b0, b2) = cost.expansion_at_origin();
    let n = params.n_goods() as f64;
    let sigma4 = params.sigma4();
    let mut coeffs = [0.0; SERIES_TERMS];
    coeffs[0] = params.alpha();
    for m in 1..SERIES_TERMS {
        let two_m = 2.0 * m as f64;
        let prev = coeffs[m - 1];
        let prev2 = if m >= 2 { coeffs[m - 2] } else { 0.0 };
        coeffs[m] = (b0 * prev + b2 * prev2) / (two_m * (two_m + n - 2.0) * sigma4);
    }
    let r2 = r * r;
    let mut u = 0.0;
    let mut up = 0.0;
    for m in (0..SERIES_TERMS).rev() {
        u = u * r2 + coeffs[m];
        if m >= 1 {
            up = up * r2 + 2.0 * m as f64 * coeffs[m];
        }
    }
    // up holds sum_{m>=1} 2m a_{2m} r^(2m-2); one more factor of r.
    (u, up * r)
}

/// Classical RK4 on `(u, u')' = (u', b u / sigma^4 - (N-1) u' / r)`.
pub fn solve_rk(
    params: &ModelParams,
    cost: &CostSpec,
    grid: &RadialGrid,
) -> Result<RadialSolution, SolverError> {
    let nodes = grid.nodes();
    let n = nodes.len();
    let n1 = (params.n_goods() - 1) as f64;
    let sigma4 = params.sigma4();
    let rhs = |r: f64, u: f64, v: f64| -> (f64, f64) {
        (v, cost.value(r) * u / sigma4 - n1 * v / r)
    };

    let mut u = vec![0.0; n];
    let mut up = vec![0.0; n];
    u[0] = params.alpha();
    up[0] = 0.0;
    let (u1, v1) = series_start(params, cost, nodes[1]);
    u[1] = u1;
    up[1] = v1;

    for i in 1..n - 1 {
        let r = nodes[i];
        let h = nodes[i + 1] - r;
        let (y, v) = (u[i], up[i]);
        let (k1u, k1v) = rhs(r, y, v);
        let (k2u, k2v) = rhs(r + 0.5 * h, y + 0.5 * h * k1u, v + 0.5 * h * k1v);
        let (k3u, k3v) = rhs(r + 0.5 * h, y + 0.5 * h * k2u, v + 0.5 * h * k2v);
        let (k4u, k4v) = rhs(r + h, y + h * k3u, v + h * k3v);
        let y_next = y + h / 6.0 * (k1u + 2.0 * k2u + 2.0 * k3u + k4u);
        let v_next = v + h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
        if !(y_next.is_finite() && v_next.is_finite()) {
            return Err(SolverError::Overflow { node: i, r });
        }
        u[i + 1] = y_next;
        up[i + 1] = v_next;
    }

    let residual = ode_residual(params, cost, grid, &u, &up);
    Ok(RadialSolution {
        grid: grid.clone(),
        u,
        u_prime: up,
        method: SolverMethod::RungeKutta,
        cost: *cost,
        iterations_or_steps: n - 1,
        residual,
    })
}

/// Result of comparing two solutions on the same grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Agreement {
    /// `max|u_a - u_b| / max|u_b|`
    pub u_discrepancy: f64,
    /// `max|u'_a - u'_b| / max|u'_b|`
    pub u_prime_discrepancy: f64,
    pub rel_tol: f64,
    pub pass: bool,
}

fn sup_relative(a: &[f64], b: &[f64]) -> f64 {
    let mut diff: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for (x, y) in a.iter().zip(b) {
        diff = diff.max((x - y).abs());
        scale = scale.max(y.abs());
    }
    if diff == 0.0 {
        0.0
    } else if scale == 0.0 {
        f64::INFINITY
    } else {
        diff / scale
    }
}

pub fn cross_check(a: &RadialSolution, b: &RadialSolution, rel_tol: f64) -> Result<Agreement, SolverError> {
    if !a.grid.same_as(&b.grid) || a.u.len() != b.u.len() || a.u_prime.len() != b.u_prime.len() {
        return Err(SolverError::GridMismatch);
    }
    let u_discrepancy = sup_relative(&a.u, &b.u);
    let u_prime_discrepancy = sup_relative(&a.u_prime, &b.u_prime);
    Ok(Agreement {
        u_discrepancy,
        u_prime_discrepancy,
        rel_tol,
        pass: u_discrepancy <= rel_tol && u_prime_discrepancy <= rel_tol,
    })
}
