//! TOML run configuration. Every section is optional and defaults to the
//! two-good example (`N = 2`, `sigma = 2`, `alpha = 1`, `R = 10`,
//! `b(r) = r^2`, `dt = 0.01`, `T = 5`); unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{validate_cost, validate_params, CostSpec, ModelError, ModelParams, RawModelParams};
use crate::radial_solver::{RadialGrid, SolverError, DEFAULT_PICARD_MAX_ITER, DEFAULT_PICARD_TOL};
use crate::simulator::SimConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Grid(#[from] SolverError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostKind {
    Quadratic,
    ScaledQuadratic,
    Saturating,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSection {
    pub kind: CostKind,
    pub c: Option<f64>,
    pub cap: Option<f64>,
    pub c0: Option<f64>,
    #[serde(default)]
    pub allow_test_only: bool,
}

impl Default for CostSection {
    fn default() -> Self {
        Self {
            kind: CostKind::Quadratic,
            c: None,
            cap: None,
            c0: None,
            allow_test_only: false,
        }
    }
}

impl CostSection {
    /// Assembles the [`CostSpec`], insisting that exactly the parameters of
    /// `kind` are present.
    pub fn spec(&self) -> Result<CostSpec, ConfigError> {
        let want = |name: &str, v: Option<f64>| {
            v.ok_or_else(|| ConfigError::Invalid(format!("cost.{name} is required for this kind")))
        };
        let forbid = |name: &str, v: Option<f64>| match v {
            Some(_) => Err(ConfigError::Invalid(format!("cost.{name} is not used by this kind"))),
            None => Ok(()),
        };
        let spec = match self.kind {
            CostKind::Quadratic => {
                forbid("c", self.c)?;
                forbid("cap", self.cap)?;
                forbid("c0", self.c0)?;
                CostSpec::Quadratic
            }
            CostKind::ScaledQuadratic => {
                forbid("cap", self.cap)?;
                forbid("c0", self.c0)?;
                CostSpec::ScaledQuadratic { c: want("c", self.c)? }
            }
            CostKind::Saturating => {
                forbid("c0", self.c0)?;
                CostSpec::Saturating {
                    c: want("c", self.c)?,
                    cap: want("cap", self.cap)?,
                }
            }
            CostKind::Constant => {
                forbid("c", self.c)?;
                forbid("cap", self.cap)?;
                CostSpec::Constant { c0: want("c0", self.c0)? }
            }
        };
        // b == 0 is a degenerate test input that the cost validator rejects;
        // the test-only flag lets it through unvalidated.
        if self.allow_test_only && spec == (CostSpec::Constant { c0: 0.0 }) {
            return Ok(spec);
        }
        Ok(validate_cost(&spec, self.allow_test_only)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodChoice {
    Picard,
    Rk,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub method: MethodChoice,
    pub dr: f64,
    /// Defaults to the model radius.
    pub r_stop: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
    /// Relative agreement required between the two methods when
    /// `method = "both"`.
    pub cross_check_tol: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            method: MethodChoice::Rk,
            dr: 1e-3,
            r_stop: None,
            tol: DEFAULT_PICARD_TOL,
            max_iter: DEFAULT_PICARD_MAX_ITER,
            cross_check_tol: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    pub dt: f64,
    pub t_max: f64,
    pub n_paths: usize,
    pub seed: u64,
    /// Defaults to `(alpha, ..., alpha)`.
    pub y0: Option<Vec<f64>>,
    pub noise_off: bool,
    pub bridge_correction: bool,
    /// Paths written to `trajectories.csv`; defaults to all of them.
    pub record_paths: Option<usize>,
}

impl Default for SimSection {
    fn default() -> Self {
        Self {
            dt: 0.01,
            t_max: 5.0,
            n_paths: 100,
            seed: 0,
            y0: None,
            noise_off: false,
            bridge_correction: true,
            record_paths: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub directory: PathBuf,
    pub emit_csv: bool,
    pub emit_svg: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            directory: PathBuf::from("out"),
            emit_csv: true,
            emit_svg: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    /// Radii for the growth-ratio asymptote ladder (quadratic cost only).
    /// Defaults to `R, 2R, 5R`, dropping radii where `u` would overflow.
    pub asymptote_levels: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: RawModelParams,
    pub cost: CostSection,
    pub solver: SolverSection,
    pub sim: SimSection,
    pub output: OutputSection,
    pub verify: VerifySection,
}

/// Everything a command needs, validated together.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub params: ModelParams,
    pub cost: CostSpec,
    pub grid: RadialGrid,
    pub sim: SimConfig,
    pub record_paths: usize,
    pub asymptote_levels: Vec<f64>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn resolve(&self) -> Result<Resolved, ConfigError> {
        let params = validate_params(&self.model)?;
        let cost = self.cost.spec()?;
        let radius = params.radius();
        let dr = self.solver.dr;
        if !(dr.is_finite() && dr > 0.0) {
            return Err(ConfigError::Invalid(format!("solver.dr must be positive, got {dr}")));
        }
        let ratio = radius / dr;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) {
            return Err(ConfigError::Invalid(format!(
                "model.radius / solver.dr = {ratio} must be an integer"
            )));
        }
        let r_stop = self.solver.r_stop.unwrap_or(radius);
        if r_stop < radius {
            return Err(ConfigError::Invalid(format!(
                "solver.r_stop = {r_stop} must be at least model.radius = {radius}"
            )));
        }
        let grid = RadialGrid::new(r_stop, dr)?;
        if grid.step() != dr && (grid.step() - dr).abs() > 1e-9 * dr {
            return Err(ConfigError::Invalid(format!(
                "solver.r_stop / solver.dr = {} must be an integer",
                r_stop / dr
            )));
        }
        if !(self.solver.tol > 0.0) || self.solver.max_iter == 0 {
            return Err(ConfigError::Invalid("solver.tol and solver.max_iter must be positive".into()));
        }
        if !(self.solver.cross_check_tol > 0.0) {
            return Err(ConfigError::Invalid("solver.cross_check_tol must be positive".into()));
        }

        let y0 = self
            .sim
            .y0
            .clone()
            .unwrap_or_else(|| vec![params.alpha(); params.n_goods()]);
        if y0.len() != params.n_goods() {
            return Err(ConfigError::Invalid(format!(
                "sim.y0 has {} entries, model.n_goods = {}",
                y0.len(),
                params.n_goods()
            )));
        }
        let sim = SimConfig {
            dt: self.sim.dt,
            t_max: self.sim.t_max,
            n_paths: self.sim.n_paths,
            seed: self.sim.seed,
            y0,
            noise_off: self.sim.noise_off,
            bridge_correction: self.sim.bridge_correction,
        };
        sim.validate(&params).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let record_paths = self.sim.record_paths.unwrap_or(sim.n_paths).min(sim.n_paths);

        let asymptote_levels = match &self.verify.asymptote_levels {
            Some(levels) => levels.clone(),
            None => {
                // ln u ~ r^2 / (2 sigma^2); stay well inside f64 range
                let limit = 30.0 * params.sigma();
                [1.0, 2.0, 5.0]
                    .iter()
                    .map(|m| m * radius)
                    .filter(|r| *r <= limit)
                    .collect()
            }
        };

        Ok(Resolved {
            params,
            cost,
            grid,
            sim,
            record_paths,
            asymptote_levels,
        })
    }
}
