//! Structural checks on a solved configuration.
//!
//! Every check measures the worst *excess* over its nodes: the amount by which
//! the inequality is violated before any slack (negative when it holds with
//! margin). A check passes when the excess is within its slack.

use serde::Serialize;
use thiserror::Error;

use crate::model::{CostSpec, ModelParams};
use crate::policy::{phi_profile, FeedbackPolicy, PhiProfile, ValueProfile};
use crate::radial_solver::{solve_rk, RadialGrid, RadialSolution, SolverError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiagnosticsError {
    #[error("inputs disagree: {0}")]
    InputMismatch(String),
    #[error("asymptote ladder needs quadratic cost, got {0}")]
    RequiresQuadratic(&'static str),
    #[error("asymptote ladder needs positive increasing radii")]
    BadLevels,
    #[error(transparent)]
    Solver(#[from] SolverError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tolerances {
    /// Absolute slack for first-difference monotonicity checks.
    pub monotone_abs: f64,
    /// Relative slack for second-difference convexity/concavity checks.
    pub convexity_rel: f64,
    /// Absolute slack for the convexity and growth-ratio bounds.
    pub bound_abs: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            monotone_abs: 1e-12,
            convexity_rel: 1e-9,
            bound_abs: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckRecord {
    pub name: String,
    pub applicable: bool,
    pub pass: bool,
    pub worst_excess: f64,
    pub slack: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub worst_node: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub worst_r: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvariantReport {
    pub overall_pass: bool,
    #[serde(rename = "check")]
    pub checks: Vec<CheckRecord>,
}

impl InvariantReport {
    pub fn check(&self, name: &str) -> Option<&CheckRecord> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failed(&self) -> impl Iterator<Item = &CheckRecord> {
        self.checks.iter().filter(|c| c.applicable && !c.pass)
    }
}

/// Names of the checks, in report order.
pub const CHECK_NAMES: [&str; 11] = [
    "u_positive",
    "u_prime_nonnegative",
    "u_convex",
    "convexity_bound",
    "z_nonincreasing",
    "z_concave",
    "p_magnitude_nondecreasing",
    "phi_nondecreasing",
    "phi_bound",
    "boundary_constraint",
    "representation_consistency",
];

struct Worst {
    excess: f64,
    node: Option<usize>,
}

impl Worst {
    fn over(excesses: impl Iterator<Item = (usize, f64)>) -> Self {
        let mut worst = Worst {
            excess: f64::NEG_INFINITY,
            node: None,
        };
        for (i, e) in excesses {
            // NaN counts as a violation
            if e.is_nan() || e > worst.excess {
                worst = Worst {
                    excess: if e.is_nan() { f64::INFINITY } else { e },
                    node: Some(i),
                };
            }
        }
        worst
    }
}

fn record(name: &str, grid: &RadialGrid, worst: Worst, slack: f64, strict: bool) -> CheckRecord {
    let pass = if strict {
        worst.excess < slack
    } else {
        worst.excess <= slack
    };
    CheckRecord {
        name: name.to_string(),
        applicable: true,
        pass,
        worst_excess: worst.excess,
        slack,
        worst_node: worst.node,
        worst_r: worst.node.map(|i| grid.nodes()[i]),
    }
}

fn not_applicable(name: &str) -> CheckRecord {
    CheckRecord {
        name: name.to_string(),
        applicable: false,
        pass: true,
        worst_excess: 0.0,
        slack: 0.0,
        worst_node: None,
        worst_r: None,
    }
}

fn first_differences(v: &[f64]) -> impl Iterator<Item = (usize, f64)> + '_ {
    v.windows(2).enumerate().map(|(i, w)| (i + 1, w[1] - w[0]))
}

fn second_differences(v: &[f64]) -> impl Iterator<Item = (usize, f64)> + '_ {
    v.windows(3).enumerate().map(|(i, w)| (i + 1, w[2] - 2.0 * w[1] + w[0]))
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn ensure_same_grid(sol: &RadialSolution, other: &RadialGrid, what: &str) -> Result<(), DiagnosticsError> {
    if &sol.grid != other {
        return Err(DiagnosticsError::InputMismatch(format!("{what} grid differs from solution grid")));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn run_suite(
    sol: &RadialSolution,
    vp: &ValueProfile,
    fp: &FeedbackPolicy,
    pp: &PhiProfile,
    params: &ModelParams,
    cost: &CostSpec,
    tol: &Tolerances,
) -> Result<InvariantReport, DiagnosticsError> {
    ensure_same_grid(sol, &vp.grid, "value profile")?;
    ensure_same_grid(sol, &fp.grid, "feedback policy")?;
    ensure_same_grid(sol, &pp.grid, "phi profile")?;
    if fp.n_goods != params.n_goods() {
        return Err(DiagnosticsError::InputMismatch(format!(
            "policy has {} goods, model has {}",
            fp.n_goods,
            params.n_goods()
        )));
    }
    if sol.cost != *cost {
        return Err(DiagnosticsError::InputMismatch("solution was computed for a different cost".into()));
    }
    let grid = &sol.grid;
    let nodes = grid.nodes();
    let u = &sol.u;
    let up = &sol.u_prime;
    let n = params.n_goods() as f64;
    let sigma4 = params.sigma4();
    let s2 = params.sigma() * params.sigma();
    let max_u = max_abs(u);
    let mut checks = Vec::with_capacity(CHECK_NAMES.len());

    checks.push(record(
        "u_positive",
        grid,
        Worst::over(u.iter().map(|v| -v).enumerate()),
        0.0,
        true,
    ));
    checks.push(record(
        "u_prime_nonnegative",
        grid,
        Worst::over(up.iter().map(|v| -v).enumerate()),
        tol.monotone_abs,
        false,
    ));
    checks.push(record(
        "u_convex",
        grid,
        Worst::over(second_differences(u).map(|(i, d)| (i, -d))),
        tol.convexity_rel * max_u,
        false,
    ));
    checks.push(record(
        "convexity_bound",
        grid,
        Worst::over((1..nodes.len()).map(|i| {
            let r = nodes[i];
            (i, up[i] / r - cost.value(r) * u[i] / (n * sigma4))
        })),
        tol.bound_abs,
        false,
    ));
    checks.push(record(
        "z_nonincreasing",
        grid,
        Worst::over(first_differences(&vp.z)),
        tol.monotone_abs,
        false,
    ));
    checks.push(record(
        "z_concave",
        grid,
        Worst::over(second_differences(&vp.z)),
        tol.convexity_rel * (1.0 + max_abs(&vp.z)),
        false,
    ));
    checks.push(record(
        "p_magnitude_nondecreasing",
        grid,
        Worst::over(first_differences(&fp.magnitude).map(|(i, d)| (i, -d))),
        tol.monotone_abs,
        false,
    ));
    if cost.bounded_by_square() {
        checks.push(record(
            "phi_nondecreasing",
            grid,
            Worst::over(first_differences(&pp.phi).map(|(i, d)| (i, -d))),
            tol.monotone_abs,
            false,
        ));
        checks.push(record(
            "phi_bound",
            grid,
            Worst::over(pp.phi.iter().map(|f| f - 1.0 / s2).enumerate()),
            tol.bound_abs,
            false,
        ));
    } else {
        checks.push(not_applicable("phi_nondecreasing"));
        checks.push(not_applicable("phi_bound"));
    }
    if cost.is_zero() {
        checks.push(not_applicable("boundary_constraint"));
    } else {
        let i = vp.boundary_index;
        checks.push(record(
            "boundary_constraint",
            grid,
            Worst {
                excess: params.alpha() - u[i],
                node: Some(i),
            },
            0.0,
            true,
        ));
    }
    checks.push(record(
        "representation_consistency",
        grid,
        Worst::over((1..nodes.len()).map(|i| {
            let m = fp.magnitude[i];
            let gap = (m - s2 * nodes[i] * pp.phi[i]).abs();
            (i, gap / m.abs().max(1.0))
        })),
        1e-12,
        false,
    ));

    let overall_pass = checks.iter().all(|c| !c.applicable || c.pass);
    Ok(InvariantReport {
        overall_pass,
        checks,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AsymptoteLevel {
    pub r: f64,
    /// `sigma^2 phi(r)`, which tends to 1 from below.
    pub scaled_phi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AsymptoteReport {
    pub levels: Vec<AsymptoteLevel>,
    pub increasing: bool,
    pub below_one: bool,
    pub pass: bool,
}

/// Solves out to each radius in `r_levels` (RK, spacing `step`) and reports
/// `sigma^2 phi` there.
pub fn asymptote_check(
    params: &ModelParams,
    cost: &CostSpec,
    r_levels: &[f64],
    step: f64,
) -> Result<AsymptoteReport, DiagnosticsError> {
    if *cost != CostSpec::Quadratic {
        return Err(DiagnosticsError::RequiresQuadratic(cost.kind_name()));
    }
    if r_levels.is_empty() || r_levels.iter().any(|r| !(*r > 0.0)) || r_levels.windows(2).any(|w| w[1] <= w[0]) {
        return Err(DiagnosticsError::BadLevels);
    }
    let s2 = params.sigma() * params.sigma();
    let mut levels = Vec::with_capacity(r_levels.len());
    for &r in r_levels {
        let grid = RadialGrid::new(r, step)?;
        let sol = solve_rk(params, cost, &grid)?;
        let phi = phi_profile(&sol, params);
        levels.push(AsymptoteLevel {
            r,
            scaled_phi: s2 * phi.phi[phi.phi.len() - 1],
        });
    }
    let increasing = levels.windows(2).all(|w| w[1].scaled_phi > w[0].scaled_phi);
    let below_one = levels.iter().all(|l| l.scaled_phi < 1.0);
    Ok(AsymptoteReport {
        levels,
        increasing,
        below_one,
        pass: increasing && below_one,
    })
}
