//! Euler-Maruyama simulation of the controlled inventory
//!
//! ```text
//! y_{k+1} = y_k + p*(y_k) dt + sigma dW_k,    dW_k ~ N(0, dt I_N)
//! ```
//!
//! stopped at the first step with `|y_k| >= R`, and the Monte Carlo estimate
//! of the running cost `E sum_k (|p*(y_k)|^2 + b(|y_k|)) dt` over the steps
//! before the stopping time.
//!
//! Every path draws from its own ChaCha8 stream (key from the seed, stream
//! id = path index), so a batch is a pure function of `(seed, config)` no
//! matter how paths are scheduled across threads.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use rayon::prelude::*;
use thiserror::Error;

use crate::model::{CostSpec, ModelParams};
use crate::policy::{FeedbackPolicy, PolicyError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("path {path} reached |y| = {norm} outside the policy grid without crossing R")]
    PolicyDomainExceeded { path: usize, norm: f64 },
    #[error("cannot estimate cost from an empty batch")]
    EmptyBatch,
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    pub t_max: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub y0: Vec<f64>,
    /// Drop the Brownian term; test-only deterministic mode.
    pub noise_off: bool,
    /// Test for exits of the Brownian bridge between grid times (see
    /// [`bridge_exit_probability`]). Off gives the plain discretely
    /// monitored scheme, whose cost is biased upward by `O(sqrt(dt))`.
    pub bridge_correction: bool,
}

impl SimConfig {
    /// Number of Euler steps that fit in `[0, t_max]`.
    pub fn max_steps(&self) -> usize {
        (self.t_max / self.dt + 1e-9).floor() as usize
    }

    pub fn validate(&self, params: &ModelParams) -> Result<(), SimError> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(SimError::InvalidConfig(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_max.is_finite() && self.t_max > 0.0) {
            return Err(SimError::InvalidConfig(format!(
                "t_max must be positive, got {}",
                self.t_max
            )));
        }
        if self.dt > self.t_max / 10.0 {
            return Err(SimError::InvalidConfig(format!(
                "dt = {} exceeds t_max / 10 = {}",
                self.dt,
                self.t_max / 10.0
            )));
        }
        if self.n_paths == 0 {
            return Err(SimError::InvalidConfig("n_paths must be at least 1".into()));
        }
        if self.y0.len() != params.n_goods() {
            return Err(SimError::InvalidConfig(format!(
                "y0 has {} components, model has {} goods",
                self.y0.len(),
                params.n_goods()
            )));
        }
        if self.y0.iter().any(|v| !v.is_finite()) {
            return Err(SimError::InvalidConfig("y0 must be finite".into()));
        }
        Ok(())
    }
}

/// One simulated path. States and controls are stored row-major with
/// `n_goods` entries per recorded time.
#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord {
    pub times: Vec<f64>,
    pub states: Vec<f64>,
    /// `p*(y)` at each recorded state; zero at the stopped state, where
    /// production is halted.
    pub controls: Vec<f64>,
    /// Stopping time, or the last recorded time when the path never stopped.
    pub tau: f64,
    pub stopped: bool,
}

impl PathRecord {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, k: usize, n_goods: usize) -> &[f64] {
        &self.states[k * n_goods..(k + 1) * n_goods]
    }

    pub fn control(&self, k: usize, n_goods: usize) -> &[f64] {
        &self.controls[k * n_goods..(k + 1) * n_goods]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBatch {
    pub n_goods: usize,
    pub radius: f64,
    pub paths: Vec<PathRecord>,
    pub config: SimConfig,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarloEstimate {
    pub mean_cost: f64,
    /// Sample standard deviation (n - 1 denominator) over `sqrt(n_paths)`.
    pub std_error: f64,
    pub n_paths: usize,
    pub fraction_stopped: f64,
}

/// Standard normals from a ChaCha8 stream by the Box-Muller transform:
/// with `u1 in (0, 1]` and `u2 in [0, 1)` built from the top 53 bits of
/// consecutive 64-bit outputs, `sqrt(-2 ln u1) (cos 2 pi u2, sin 2 pi u2)`.
/// The sine variate is kept for the next call.
pub struct NormalStream {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl NormalStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng, spare: None }
    }

    fn unit(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn next_uniform(&mut self) -> f64 {
        self.unit()
    }

    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = 1.0 - self.unit();
        let u2 = self.unit();
        let radius = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        self.spare = Some(radius * s);
        radius * c
    }
}

/// Probability that a Brownian bridge with per-component variance
/// `sigma^2 dt` joining two points at distances `d0, d1 > 0` inside the
/// boundary touches it, using the tangent half-space:
/// `exp(-2 d0 d1 / (sigma^2 dt))`.
pub fn bridge_exit_probability(d0: f64, d1: f64, sigma: f64, dt: f64) -> f64 {
    (-2.0 * d0 * d1 / (sigma * sigma * dt)).exp()
}

/// Exponent beyond which the bridge probability is treated as zero
/// (`e^-40 < 5e-18`) and no uniform is drawn.
const BRIDGE_CUTOFF: f64 = 40.0;

/// Radially projects `y` onto the sphere of radius `radius`, nudging outward
/// until rounding leaves `|y| >= radius`.
fn project_onto_sphere(y: &mut [f64], radius: f64) {
    let r = norm(y);
    let mut s = radius / r;
    loop {
        for v in y.iter_mut() {
            *v *= s;
        }
        if norm(y) >= radius {
            return;
        }
        s = 1.0 + f64::EPSILON;
    }
}

fn norm(y: &[f64]) -> f64 {
    y.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn check_domain(policy: &FeedbackPolicy, params: &ModelParams, cfg: &SimConfig) -> Result<(), SimError> {
    cfg.validate(params)?;
    if policy.n_goods != params.n_goods() {
        return Err(SimError::InvalidConfig(format!(
            "policy is for {} goods, model has {}",
            policy.n_goods,
            params.n_goods()
        )));
    }
    Ok(())
}

/// Visits every recorded state of one path: `(k, y_k, p_k, stopped_here)`.
/// Returns `(tau, stopped)`.
fn walk_path(
    policy: &FeedbackPolicy,
    params: &ModelParams,
    cfg: &SimConfig,
    path: usize,
    mut visit: impl FnMut(usize, &[f64], &[f64], bool),
) -> Result<(f64, bool), SimError> {
    let n = params.n_goods();
    let radius = params.radius();
    let scale = params.sigma() * cfg.dt.sqrt();
    let steps = cfg.max_steps();
    let mut normals = NormalStream::new(cfg.seed, path as u64);
    let mut y = cfg.y0.clone();
    let mut p = vec![0.0; n];
    let zero = vec![0.0; n];

    for k in 0..=steps {
        let r = norm(&y);
        if r >= radius {
            visit(k, &y, &zero, true);
            return Ok((k as f64 * cfg.dt, true));
        }
        policy.eval_into(&y, &mut p).map_err(|e| match e {
            PolicyError::OutOfDomain { norm, .. } => SimError::PolicyDomainExceeded { path, norm },
            other => SimError::Policy(other),
        })?;
        visit(k, &y, &p, false);
        if k == steps {
            break;
        }
        for i in 0..n {
            let noise = if cfg.noise_off { 0.0 } else { scale * normals.next_normal() };
            y[i] += p[i] * cfg.dt + noise;
        }
        if cfg.bridge_correction && !cfg.noise_off {
            let r_next = norm(&y);
            if r_next < radius {
                let (d0, d1) = (radius - r, radius - r_next);
                let exponent = 2.0 * d0 * d1 / (params.sigma() * params.sigma() * cfg.dt);
                if exponent < BRIDGE_CUTOFF
                    && normals.next_uniform() < bridge_exit_probability(d0, d1, params.sigma(), cfg.dt)
                {
                    project_onto_sphere(&mut y, radius);
                }
            }
        }
    }
    Ok((steps as f64 * cfg.dt, false))
}

fn running_cost(cost: &CostSpec, y: &[f64], p: &[f64], dt: f64) -> f64 {
    let p2: f64 = p.iter().map(|v| v * v).sum();
    (p2 + cost.value(norm(y))) * dt
}

pub fn simulate_paths(
    policy: &FeedbackPolicy,
    params: &ModelParams,
    cfg: &SimConfig,
) -> Result<TrajectoryBatch, SimError> {
    check_domain(policy, params, cfg)?;
    let dt = cfg.dt;
    let paths = (0..cfg.n_paths)
        .into_par_iter()
        .map(|path| {
            let mut rec = PathRecord {
                times: Vec::new(),
                states: Vec::new(),
                controls: Vec::new(),
                tau: 0.0,
                stopped: false,
            };
            let (tau, stopped) = walk_path(policy, params, cfg, path, |k, y, p, _| {
                rec.times.push(k as f64 * dt);
                rec.states.extend_from_slice(y);
                rec.controls.extend_from_slice(p);
            })?;
            rec.tau = tau;
            rec.stopped = stopped;
            Ok(rec)
        })
        .collect::<Result<Vec<_>, SimError>>()?;
    Ok(TrajectoryBatch {
        n_goods: params.n_goods(),
        radius: params.radius(),
        paths,
        config: cfg.clone(),
    })
}

fn summarize(costs: &[f64], stopped: usize) -> MonteCarloEstimate {
    let n = costs.len();
    let mean = costs.iter().sum::<f64>() / n as f64;
    let std_error = if n > 1 {
        let var = costs.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    } else {
        0.0
    };
    MonteCarloEstimate {
        mean_cost: mean,
        std_error,
        n_paths: n,
        fraction_stopped: stopped as f64 / n as f64,
    }
}

/// Left-endpoint running cost of every path, over the steps before `tau`.
pub fn estimate_cost(
    batch: &TrajectoryBatch,
    cost: &CostSpec,
    policy: &FeedbackPolicy,
) -> Result<MonteCarloEstimate, SimError> {
    if batch.paths.is_empty() {
        return Err(SimError::EmptyBatch);
    }
    let n = batch.n_goods;
    let dt = batch.config.dt;
    let mut p = vec![0.0; n];
    let mut costs = Vec::with_capacity(batch.paths.len());
    let mut stopped = 0;
    for rec in &batch.paths {
        let mut total = 0.0;
        // the final record is either the stopped state or the horizon
        for k in 0..rec.len().saturating_sub(1) {
            let y = rec.state(k, n);
            policy.eval_into(y, &mut p)?;
            total += running_cost(cost, y, &p, dt);
        }
        costs.push(total);
        stopped += usize::from(rec.stopped);
    }
    Ok(summarize(&costs, stopped))
}

/// Same estimate as `estimate_cost(simulate_paths(..))`, without keeping the
/// trajectories.
pub fn monte_carlo_cost(
    policy: &FeedbackPolicy,
    params: &ModelParams,
    cost: &CostSpec,
    cfg: &SimConfig,
) -> Result<MonteCarloEstimate, SimError> {
    check_domain(policy, params, cfg)?;
    let steps = cfg.max_steps();
    let per_path = (0..cfg.n_paths)
        .into_par_iter()
        .map(|path| {
            let mut total = 0.0;
            let (_, stopped) = walk_path(policy, params, cfg, path, |k, y, p, stopped_here| {
                if !stopped_here && k < steps {
                    total += running_cost(cost, y, p, cfg.dt);
                }
            })?;
            Ok((total, stopped))
        })
        .collect::<Result<Vec<_>, SimError>>()?;
    let costs: Vec<f64> = per_path.iter().map(|(c, _)| *c).collect();
    let stopped = per_path.iter().filter(|(_, s)| *s).count();
    Ok(summarize(&costs, stopped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::feedback_policy;
    use crate::radial_solver::{solve_rk, RadialGrid};

    fn example_policy(n: usize) -> (ModelParams, FeedbackPolicy) {
        let p = ModelParams::new(n, 2.0, 1.0, 10.0).unwrap();
        let sol = solve_rk(&p, &CostSpec::Quadratic, &RadialGrid::new(10.0, 1e-3).unwrap()).unwrap();
        let fp = feedback_policy(&sol, &p);
        (p, fp)
    }

    fn config(y0: Vec<f64>, n_paths: usize) -> SimConfig {
        SimConfig {
            dt: 1e-2,
            t_max: 20.0,
            n_paths,
            seed: 7,
            y0,
            noise_off: false,
            bridge_correction: true,
        }
    }

    #[test]
    fn normal_stream_moments() {
        let mut s = NormalStream::new(42, 3);
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| s.next_normal()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.01, "var {var}");
        let mut a = NormalStream::new(42, 3);
        let mut b = NormalStream::new(42, 4);
        assert_ne!(a.next_normal(), b.next_normal());
    }

    #[test]
    fn starting_outside_stops_immediately() {
        let (p, fp) = example_policy(2);
        let cfg = config(vec![8.0, 8.0], 5);
        let batch = simulate_paths(&fp, &p, &cfg).unwrap();
        for rec in &batch.paths {
            assert!(rec.stopped);
            assert_eq!(rec.tau, 0.0);
            assert_eq!(rec.len(), 1);
        }
        let est = estimate_cost(&batch, &CostSpec::Quadratic, &fp).unwrap();
        assert_eq!(est.mean_cost, 0.0);
        assert_eq!(est.std_error, 0.0);
        assert_eq!(est.fraction_stopped, 1.0);
    }

    #[test]
    fn stopping_invariants_hold() {
        let (p, fp) = example_policy(2);
        let batch = simulate_paths(&fp, &p, &config(vec![1.0, 1.0], 200)).unwrap();
        for rec in &batch.paths {
            let last = rec.len() - 1;
            for k in 0..last {
                assert!(norm(rec.state(k, 2)) < 10.0);
                assert!(rec.times[k] < rec.tau);
            }
            if rec.stopped {
                assert!(norm(rec.state(last, 2)) >= 10.0);
                assert_eq!(rec.times[last], rec.tau);
            }
            assert!(rec.tau <= batch.config.t_max);
        }
    }

    #[test]
    fn streaming_estimate_matches_batch_estimate() {
        let (p, fp) = example_policy(2);
        let cfg = config(vec![1.0, 1.0], 64);
        let batch = simulate_paths(&fp, &p, &cfg).unwrap();
        let a = estimate_cost(&batch, &CostSpec::Quadratic, &fp).unwrap();
        let b = monte_carlo_cost(&fp, &p, &CostSpec::Quadratic, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn same_seed_same_batch_across_thread_counts() {
        let (p, fp) = example_policy(3);
        let cfg = config(vec![1.0, 0.5, -0.5], 40);
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| simulate_paths(&fp, &p, &cfg)).unwrap();
        let b = four.install(|| simulate_paths(&fp, &p, &cfg)).unwrap();
        assert_eq!(a, b);
        let c = simulate_paths(&fp, &p, &SimConfig { seed: 8, ..cfg }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn config_validation() {
        let p = ModelParams::new(2, 2.0, 1.0, 10.0).unwrap();
        let mut cfg = config(vec![1.0, 1.0], 1);
        assert!(cfg.validate(&p).is_ok());
        cfg.dt = 5.0;
        assert!(cfg.validate(&p).is_err());
        let cfg = config(vec![1.0], 1);
        assert!(cfg.validate(&p).is_err());
        let cfg = config(vec![1.0, 1.0], 0);
        assert!(cfg.validate(&p).is_err());
    }

    #[test]
    fn short_policy_grid_is_reported() {
        let p = ModelParams::new(1, 2.0, 1.0, 10.0).unwrap();
        let sol = solve_rk(&p, &CostSpec::Quadratic, &RadialGrid::new(2.0, 1e-2).unwrap()).unwrap();
        let fp = feedback_policy(&sol, &p);
        let cfg = SimConfig {
            noise_off: true,
            ..config(vec![2.5], 1)
        };
        assert!(matches!(
            simulate_paths(&fp, &p, &cfg),
            Err(SimError::PolicyDomainExceeded { path: 0, .. })
        ));
    }

    #[test]
    fn empty_batch_is_rejected() {
        let (p, fp) = example_policy(1);
        let batch = TrajectoryBatch {
            n_goods: 1,
            radius: p.radius(),
            paths: vec![],
            config: config(vec![0.0], 1),
        };
        assert_eq!(
            estimate_cost(&batch, &CostSpec::Quadratic, &fp),
            Err(SimError::EmptyBatch)
        );
    }
}
