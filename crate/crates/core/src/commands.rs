//! The `solve`, `simulate`, `verify` and `sweep` commands.
//!
//! Each command validates the whole config first, computes everything in
//! memory and writes its files once at the end. CSV numbers use the shortest
//! representation that parses back to the same `f64`, so identical inputs
//! give byte-identical files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::config::{ConfigError, MethodChoice, Resolved, RunConfig};
use crate::diagnostics::{
    asymptote_check, run_suite, AsymptoteReport, DiagnosticsError, InvariantReport, Tolerances,
};
use crate::model::{validate_cost, CostSpec, ModelError, ModelParams, RawModelParams};
use crate::policy::{
    feedback_policy, phi_profile, value_function, FeedbackPolicy, PhiProfile, PolicyError, ValueProfile,
};
use crate::radial_solver::{
    cross_check, solve_picard, solve_rk, Agreement, RadialGrid, RadialSolution, SolverError,
};
use crate::simulator::{monte_carlo_cost, simulate_paths, MonteCarloEstimate, SimError, TrajectoryBatch};
use crate::svg::{LineChart, Marker, Series};

#[derive(Debug, Error)]
pub enum CommandError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Diagnostics(#[from] DiagnosticsError),
    #[error("unknown sweep parameter {0:?} (expected sigma, alpha, radius, n_goods or cost.c)")]
    UnknownSweepParameter(String),
    #[error("bad solution file {path}: {reason}")]
    SolutionFile { path: PathBuf, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CommandError {
    /// 2 for anything wrong with the inputs, 3 for runtime or numerical
    /// failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CommandError::Config(_) | CommandError::UnknownSweepParameter(_) => 2,
            CommandError::Sim(SimError::InvalidConfig(_)) => 2,
            _ => 3,
        }
    }
}

impl From<ModelError> for CommandError {
    fn from(e: ModelError) -> Self {
        CommandError::Config(ConfigError::Model(e))
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CommandError + '_ {
    move |source| CommandError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, CommandError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(io_err(&path))?;
    Ok(path)
}

/// Shortest round-trip decimal form, switching to exponent notation for very
/// large or small magnitudes. `-0` is written as `0.0`.
fn num(x: f64) -> String {
    format!("{:?}", x + 0.0)
}

/// The radial pipeline for one configuration.
#[derive(Debug, Clone)]
pub struct Solved {
    pub params: ModelParams,
    pub cost: CostSpec,
    pub solution: RadialSolution,
    /// Cross-check against the other method when `method = "both"`.
    pub agreement: Option<Agreement>,
    pub value: ValueProfile,
    pub policy: FeedbackPolicy,
    pub phi: PhiProfile,
}

impl Solved {
    fn from_solution(
        params: ModelParams,
        cost: CostSpec,
        solution: RadialSolution,
        agreement: Option<Agreement>,
    ) -> Result<Self, CommandError> {
        let value = value_function(&solution, &params)?;
        let policy = feedback_policy(&solution, &params);
        let phi = phi_profile(&solution, &params);
        Ok(Self {
            params,
            cost,
            solution,
            agreement,
            value,
            policy,
            phi,
        })
    }

    /// `z` at `|y|`; on or beyond `R` this is the boundary level.
    pub fn value_at_state(&self, y: &[f64]) -> Result<f64, CommandError> {
        let r = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if r >= self.params.radius() {
            return Ok(self.value.z0_boundary);
        }
        Ok(self.value.value_at(r)?)
    }
}

pub fn solve_resolved(cfg: &RunConfig, res: &Resolved) -> Result<Solved, CommandError> {
    let s = &cfg.solver;
    let picard = || solve_picard(&res.params, &res.cost, &res.grid, s.tol, s.max_iter);
    let rk = || solve_rk(&res.params, &res.cost, &res.grid);
    let (solution, agreement) = match s.method {
        MethodChoice::Picard => (picard()?, None),
        MethodChoice::Rk => (rk()?, None),
        MethodChoice::Both => {
            let a = picard()?;
            let b = rk()?;
            let agreement = cross_check(&a, &b, s.cross_check_tol)?;
            (b, Some(agreement))
        }
    };
    Solved::from_solution(res.params, res.cost, solution, agreement)
}

pub fn solve_config(cfg: &RunConfig) -> Result<Solved, CommandError> {
    let res = cfg.resolve()?;
    solve_resolved(cfg, &res)
}

pub const SOLUTION_HEADER: &str = "r,u,u_prime,z,phi,p_magnitude,p_demand_adjusted";

pub fn solution_csv(solved: &Solved) -> String {
    let sol = &solved.solution;
    let mut out = String::with_capacity(sol.u.len() * 120);
    out.push_str(SOLUTION_HEADER);
    out.push('\n');
    for i in 0..sol.u.len() {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            num(sol.nodes()[i]),
            num(sol.u[i]),
            num(sol.u_prime[i]),
            num(solved.value.z[i]),
            num(solved.phi.phi[i]),
            num(solved.policy.magnitude[i]),
            num(solved.policy.demand_adjusted[i]),
        );
    }
    out
}

/// Reads `u` and `u'` back from a `radial_solution.csv` onto `grid`.
pub fn load_solution(
    path: &Path,
    cost: &CostSpec,
    grid: &RadialGrid,
) -> Result<RadialSolution, CommandError> {
    let bad = |reason: String| CommandError::SolutionFile {
        path: path.to_path_buf(),
        reason,
    };
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    let col = |name: &str| {
        cols.iter()
            .position(|c| c.trim() == name)
            .ok_or_else(|| bad(format!("missing column {name}")))
    };
    let (ir, iu, iup) = (col("r")?, col("u")?, col("u_prime")?);
    let mut u = Vec::new();
    let mut up = Vec::new();
    for (k, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let parse = |i: usize| -> Result<f64, CommandError> {
            fields
                .get(i)
                .and_then(|s| s.trim().parse::<f64>().ok())
                .ok_or_else(|| bad(format!("row {}: bad number in column {i}", k + 1)))
        };
        let r = parse(ir)?;
        let expected = grid.nodes().get(k).copied().unwrap_or(f64::NAN);
        if (r - expected).abs() > 1e-9 * grid.step() {
            return Err(bad(format!("row {}: r = {r} does not match grid node {expected}", k + 1)));
        }
        u.push(parse(iu)?);
        up.push(parse(iup)?);
    }
    if u.len() != grid.len() {
        return Err(bad(format!("{} rows, grid has {} nodes", u.len(), grid.len())));
    }
    Ok(RadialSolution {
        grid: grid.clone(),
        u,
        u_prime: up,
        method: crate::radial_solver::SolverMethod::RungeKutta,
        cost: *cost,
        iterations_or_steps: 0,
        residual: f64::NAN,
    })
}

pub fn radial_figures(solved: &Solved) -> Vec<(&'static str, String)> {
    let r = solved.solution.nodes().to_vec();
    let series = |label: &str, y: &[f64]| Series {
        label: label.to_string(),
        x: r.clone(),
        y: y.to_vec(),
    };
    let z0 = solved.value.z0_boundary;
    vec![
        (
            "u.svg",
            LineChart {
                title: "Solution u(r) of the radial equation".into(),
                x_label: "r".into(),
                y_label: "u(r)".into(),
                series: vec![series("u(r)", &solved.solution.u)],
                ..Default::default()
            }
            .render(),
        ),
        (
            "z.svg",
            LineChart {
                title: "Value function z(r) = -2 sigma^2 ln u(r)".into(),
                x_label: "r".into(),
                y_label: "z(r)".into(),
                series: vec![series("z(r)", &solved.value.z)],
                markers: vec![Marker {
                    label: format!("z(R) = Z0 = {z0:.6}"),
                    y: z0,
                }],
                ..Default::default()
            }
            .render(),
        ),
        (
            "rate.svg",
            LineChart {
                title: "Optimal production rate adjusted for demand".into(),
                x_label: "r".into(),
                y_label: "sigma^2 u'(r) / (r u(r))".into(),
                series: vec![series("p*_i / y_i", &solved.policy.demand_adjusted)],
                markers: vec![Marker {
                    label: "asymptote 1".into(),
                    y: 1.0,
                }],
                ..Default::default()
            }
            .render(),
        ),
        (
            "rate_magnitude.svg",
            LineChart {
                title: "Magnitude of the optimal production rate".into(),
                x_label: "r".into(),
                y_label: "|p*| = sigma^2 u'(r) / u(r)".into(),
                series: vec![series("|p*|", &solved.policy.magnitude)],
                ..Default::default()
            }
            .render(),
        ),
    ]
}

/// Paths written by `solve`.
pub fn cmd_solve(cfg: &RunConfig, out_dir: &Path) -> Result<(Solved, Vec<PathBuf>), CommandError> {
    let solved = solve_config(cfg)?;
    let mut written = Vec::new();
    if cfg.output.emit_csv {
        written.push(write_file(out_dir, "radial_solution.csv", &solution_csv(&solved))?);
    }
    if cfg.output.emit_svg {
        for (name, svg) in radial_figures(&solved) {
            written.push(write_file(out_dir, name, &svg)?);
        }
    }
    Ok((solved, written))
}

pub fn trajectories_csv(batch: &TrajectoryBatch) -> String {
    let n = batch.n_goods;
    let mut out = String::from("path_id,t");
    for i in 1..=n {
        let _ = write!(out, ",y_{i}");
    }
    for i in 1..=n {
        let _ = write!(out, ",p_{i}");
    }
    out.push_str(",stopped\n");
    for (id, rec) in batch.paths.iter().enumerate() {
        let last = rec.len() - 1;
        for k in 0..rec.len() {
            let _ = write!(out, "{id},{}", num(rec.times[k]));
            for v in rec.state(k, n) {
                let _ = write!(out, ",{}", num(*v));
            }
            for v in rec.control(k, n) {
                let _ = write!(out, ",{}", num(*v));
            }
            let stopped = rec.stopped && k == last;
            let _ = writeln!(out, ",{stopped}");
        }
    }
    out
}

pub const SUMMARY_HEADER: &str =
    "n_paths,mean_cost,std_error,fraction_stopped,z_at_y0,z0_boundary,consistency_gap";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub estimate: MonteCarloEstimate,
    pub z_at_y0: f64,
    pub z0_boundary: f64,
    /// `mean_cost - (z(y0) - Z0)`
    pub consistency_gap: f64,
}

pub fn summary_csv(s: &Summary) -> String {
    format!(
        "{SUMMARY_HEADER}\n{},{},{},{},{},{},{}\n",
        s.estimate.n_paths,
        num(s.estimate.mean_cost),
        num(s.estimate.std_error),
        num(s.estimate.fraction_stopped),
        num(s.z_at_y0),
        num(s.z0_boundary),
        num(s.consistency_gap),
    )
}

pub fn trajectory_figure(batch: &TrajectoryBatch) -> String {
    let n = batch.n_goods;
    let shown = n.min(6);
    let mut series = Vec::new();
    if let Some(rec) = batch.paths.first() {
        for i in 0..shown {
            series.push(Series {
                label: format!("y_{}(t)", i + 1),
                x: rec.times.clone(),
                y: (0..rec.len()).map(|k| rec.state(k, n)[i]).collect(),
            });
        }
        series.push(Series {
            label: "|y(t)|".into(),
            x: rec.times.clone(),
            y: (0..rec.len())
                .map(|k| rec.state(k, n).iter().map(|v| v * v).sum::<f64>().sqrt())
                .collect(),
        });
    }
    LineChart {
        title: "Inventory trajectories under the optimal policy".into(),
        x_label: "t".into(),
        y_label: "inventory".into(),
        series,
        markers: vec![Marker {
            label: format!("R = {}", batch.radius),
            y: batch.radius,
        }],
        note: (n > 6).then(|| format!("Only the first six of {n} products are shown")),
    }
    .render()
}

pub struct SimulateOutput {
    pub solved: Solved,
    pub batch: TrajectoryBatch,
    pub summary: Summary,
    pub written: Vec<PathBuf>,
}

pub fn cmd_simulate(cfg: &RunConfig, out_dir: &Path) -> Result<SimulateOutput, CommandError> {
    let res = cfg.resolve()?;
    let solved = solve_resolved(cfg, &res)?;
    let estimate = monte_carlo_cost(&solved.policy, &solved.params, &solved.cost, &res.sim)?;
    // paths are keyed by index, so the first k paths of any batch coincide
    let recorded = crate::simulator::SimConfig {
        n_paths: res.record_paths.max(1),
        ..res.sim.clone()
    };
    let batch = simulate_paths(&solved.policy, &solved.params, &recorded)?;
    let z_at_y0 = solved.value_at_state(&res.sim.y0)?;
    let z0 = solved.value.z0_boundary;
    let summary = Summary {
        estimate,
        z_at_y0,
        z0_boundary: z0,
        consistency_gap: estimate.mean_cost - (z_at_y0 - z0),
    };
    if batch.n_goods > 6 {
        eprintln!(
            "note: trajectories.svg shows only the first six of {} products",
            batch.n_goods
        );
    }
    let mut written = Vec::new();
    if cfg.output.emit_csv {
        written.push(write_file(out_dir, "trajectories.csv", &trajectories_csv(&batch))?);
        written.push(write_file(out_dir, "mc_summary.csv", &summary_csv(&summary))?);
    }
    if cfg.output.emit_svg {
        written.push(write_file(out_dir, "trajectories.svg", &trajectory_figure(&batch))?);
    }
    Ok(SimulateOutput {
        solved,
        batch,
        summary,
        written,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SolverSummary {
    pub method: String,
    pub iterations_or_steps: usize,
    pub residual: f64,
    pub step: f64,
    pub r_stop: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CrossCheckSummary {
    pub u_discrepancy: f64,
    pub u_prime_discrepancy: f64,
    pub rel_tol: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub overall_pass: bool,
    pub z0_boundary: f64,
    pub model: RawModelParams,
    pub cost: CostSpec,
    pub tolerances: Tolerances,
    pub solver: SolverSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cross_check: Option<CrossCheckSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub asymptote: Option<AsymptoteReport>,
    pub invariants: InvariantReport,
}

impl VerifyReport {
    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("report is plain data")
    }

    /// Names of every failed item, invariant checks first.
    pub fn failures(&self) -> Vec<String> {
        let mut out: Vec<String> = self.invariants.failed().map(|c| c.name.clone()).collect();
        if self.cross_check.as_ref().is_some_and(|c| !c.pass) {
            out.push("cross_check".into());
        }
        if self.asymptote.as_ref().is_some_and(|a| !a.pass) {
            out.push("asymptote".into());
        }
        out
    }
}

/// Runs the invariant suite, plus the asymptote ladder for quadratic cost and
/// the method cross-check when both methods ran.
pub fn verify_solved(solved: &Solved, res: &Resolved) -> Result<VerifyReport, CommandError> {
    let tolerances = Tolerances::default();
    let invariants = run_suite(
        &solved.solution,
        &solved.value,
        &solved.policy,
        &solved.phi,
        &solved.params,
        &solved.cost,
        &tolerances,
    )?;
    let asymptote = if solved.cost == CostSpec::Quadratic && !res.asymptote_levels.is_empty() {
        Some(asymptote_check(
            &solved.params,
            &solved.cost,
            &res.asymptote_levels,
            res.grid.step(),
        )?)
    } else {
        None
    };
    let cross = solved.agreement.map(|a| CrossCheckSummary {
        u_discrepancy: a.u_discrepancy,
        u_prime_discrepancy: a.u_prime_discrepancy,
        rel_tol: a.rel_tol,
        pass: a.pass,
    });
    let overall_pass = invariants.overall_pass
        && cross.as_ref().is_none_or(|c| c.pass)
        && asymptote.as_ref().is_none_or(|a| a.pass);
    Ok(VerifyReport {
        overall_pass,
        z0_boundary: solved.value.z0_boundary,
        model: solved.params.to_raw(),
        cost: solved.cost,
        tolerances,
        solver: SolverSummary {
            method: solved.solution.method.to_string(),
            iterations_or_steps: solved.solution.iterations_or_steps,
            residual: solved.solution.residual,
            step: solved.solution.grid.step(),
            r_stop: solved.solution.grid.r_stop(),
        },
        cross_check: cross,
        asymptote,
        invariants,
    })
}

/// `verify_solved` on a fresh solve, or on a solution read from disk when
/// `solution_override` is set. Writes `report.txt`.
pub fn cmd_verify(
    cfg: &RunConfig,
    out_dir: &Path,
    solution_override: Option<&Path>,
) -> Result<(VerifyReport, PathBuf), CommandError> {
    let res = cfg.resolve()?;
    let solved = match solution_override {
        Some(path) => {
            let sol = load_solution(path, &res.cost, &res.grid)?;
            Solved::from_solution(res.params, res.cost, sol, None)?
        }
        None => solve_resolved(cfg, &res)?,
    };
    let report = verify_solved(&solved, &res)?;
    let path = write_file(out_dir, "report.txt", &report.to_text())?;
    Ok((report, path))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Sigma,
    Alpha,
    Radius,
    NGoods,
    CostC,
}

impl SweepParam {
    pub fn parse(name: &str) -> Result<Self, CommandError> {
        match name {
            "sigma" => Ok(SweepParam::Sigma),
            "alpha" => Ok(SweepParam::Alpha),
            "radius" => Ok(SweepParam::Radius),
            "n_goods" => Ok(SweepParam::NGoods),
            "cost.c" => Ok(SweepParam::CostC),
            other => Err(CommandError::UnknownSweepParameter(other.to_string())),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Sigma => "sigma",
            SweepParam::Alpha => "alpha",
            SweepParam::Radius => "radius",
            SweepParam::NGoods => "n_goods",
            SweepParam::CostC => "cost.c",
        }
    }

    fn apply(self, cfg: &RunConfig, value: f64) -> Result<RunConfig, CommandError> {
        let mut next = cfg.clone();
        match self {
            SweepParam::Sigma => next.model.sigma = value,
            SweepParam::Alpha => next.model.alpha = value,
            SweepParam::Radius => {
                next.model.radius = value;
                if next.solver.r_stop.is_some_and(|r| r < value) {
                    next.solver.r_stop = Some(value);
                }
            }
            SweepParam::NGoods => {
                if !(value >= 1.0 && value.fract() == 0.0) {
                    return Err(ConfigError::Invalid(format!("n_goods must be a positive integer, got {value}")).into());
                }
                next.model.n_goods = value as usize;
            }
            SweepParam::CostC => {
                let spec = cfg.cost.spec()?;
                if !matches!(spec, CostSpec::ScaledQuadratic { .. } | CostSpec::Saturating { .. }) {
                    return Err(ConfigError::Invalid(format!(
                        "cost.c sweep needs a scaled_quadratic or saturating cost, got {}",
                        spec.kind_name()
                    ))
                    .into());
                }
                next.cost.c = Some(value);
                validate_cost(&next.cost.spec()?, next.cost.allow_test_only)?;
            }
        }
        Ok(next)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub z0_boundary: f64,
    pub p_magnitude_at_radius: f64,
    /// `sigma^2 phi(R)`
    pub scaled_phi_at_radius: f64,
    pub phi_bound: f64,
    pub phi_at_radius: f64,
    pub mean_cost: Option<f64>,
}

pub const SWEEP_HEADER: &str =
    "parameter,value,z0_boundary,p_magnitude_at_radius,scaled_phi_at_radius,phi_at_radius,phi_bound,mean_cost";

pub fn sweep_csv(param: SweepParam, rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for row in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            param.name(),
            num(row.value),
            num(row.z0_boundary),
            num(row.p_magnitude_at_radius),
            num(row.scaled_phi_at_radius),
            num(row.phi_at_radius),
            num(row.phi_bound),
            row.mean_cost.map(num).unwrap_or_default(),
        );
    }
    out
}

pub fn cmd_sweep(
    cfg: &RunConfig,
    param: SweepParam,
    values: &[f64],
    simulate: bool,
    out_dir: &Path,
) -> Result<(Vec<SweepRow>, PathBuf), CommandError> {
    let mut rows = Vec::with_capacity(values.len());
    for &value in values {
        let point = param.apply(cfg, value)?;
        let res = point.resolve()?;
        let solved = solve_resolved(&point, &res)?;
        let i = solved.value.boundary_index;
        let s2 = solved.params.sigma() * solved.params.sigma();
        let mean_cost = if simulate {
            Some(monte_carlo_cost(&solved.policy, &solved.params, &solved.cost, &res.sim)?.mean_cost)
        } else {
            None
        };
        rows.push(SweepRow {
            value,
            z0_boundary: solved.value.z0_boundary,
            p_magnitude_at_radius: solved.policy.magnitude[i],
            scaled_phi_at_radius: s2 * solved.phi.phi[i],
            phi_at_radius: solved.phi.phi[i],
            phi_bound: 1.0 / s2,
            mean_cost,
        });
    }
    let path = write_file(out_dir, "sweep.csv", &sweep_csv(param, &rows))?;
    Ok((rows, path))
}
