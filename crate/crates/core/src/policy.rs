//! Value function, growth ratio and optimal feedback control derived from a
//! radial solution `u`.
//!
//! With `z = -2 sigma^2 ln u` the optimal control is `p* = -grad(z) / 2`,
//! which for a radial `u` is
//!
//! ```text
//! p*(y) = sigma^2 u'(r) / (r u(r)) * y,   r = |y|,
//! |p*(y)| = sigma^2 u'(r) / u(r).
//! ```
//!
//! Some published forms of the componentwise rule drop the `1/r` factor;
//! that variant does not reproduce `|p*| = sigma^2 u'/u` and is not used.

use thiserror::Error;

use crate::model::ModelParams;
use crate::radial_solver::{RadialGrid, RadialSolution};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyError {
    #[error("u must be positive, found {value} at node {node}")]
    NonPositiveU { node: usize, value: f64 },
    #[error("radius {radius} lies outside the solution grid [0, {r_stop}]")]
    RadiusOutsideGrid { radius: f64, r_stop: f64 },
    #[error("|y| = {norm} exceeds the policy domain [0, {r_stop}]")]
    OutOfDomain { norm: f64, r_stop: f64 },
    #[error("state has {got} components, policy expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Linear interpolation of nodal values on a uniform grid; `r` must lie in
/// `[0, r_stop]`.
fn interpolate(grid: &RadialGrid, values: &[f64], r: f64) -> f64 {
    let last = values.len() - 1;
    let pos = r / grid.step();
    let i = (pos.floor() as usize).min(last - 1);
    let frac = (r - grid.nodes()[i]) / grid.step();
    values[i] + frac.clamp(0.0, 1.0) * (values[i + 1] - values[i])
}

/// `z(r) = -2 sigma^2 ln u(r)` on the grid, and the boundary level
/// `Z0 = z(R)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueProfile {
    pub grid: RadialGrid,
    pub z: Vec<f64>,
    pub z0_boundary: f64,
    /// Node used for `Z0`.
    pub boundary_index: usize,
}

impl ValueProfile {
    /// Linearly interpolated `z` at radius `r`.
    pub fn value_at(&self, r: f64) -> Result<f64, PolicyError> {
        if !(0.0..=self.grid.r_stop()).contains(&r) {
            return Err(PolicyError::OutOfDomain {
                norm: r,
                r_stop: self.grid.r_stop(),
            });
        }
        Ok(interpolate(&self.grid, &self.z, r))
    }
}

fn boundary_node(grid: &RadialGrid, radius: f64) -> Result<usize, PolicyError> {
    if radius > grid.r_stop() + 0.5 * grid.step() {
        return Err(PolicyError::RadiusOutsideGrid {
            radius,
            r_stop: grid.r_stop(),
        });
    }
    Ok(grid.exact_index(radius).unwrap_or_else(|| grid.nearest_index(radius)))
}

pub fn value_function(sol: &RadialSolution, params: &ModelParams) -> Result<ValueProfile, PolicyError> {
    let s2 = params.sigma() * params.sigma();
    let mut z = Vec::with_capacity(sol.u.len());
    for (node, &u) in sol.u.iter().enumerate() {
        if !(u > 0.0) {
            return Err(PolicyError::NonPositiveU { node, value: u });
        }
        z.push(-2.0 * s2 * u.ln());
    }
    let boundary_index = boundary_node(&sol.grid, params.radius())?;
    Ok(ValueProfile {
        grid: sol.grid.clone(),
        z0_boundary: z[boundary_index],
        z,
        boundary_index,
    })
}

/// Radial profile of the optimal feedback control.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackPolicy {
    pub grid: RadialGrid,
    /// `|p*|` at each node: `sigma^2 u'/u`.
    pub magnitude: Vec<f64>,
    /// `p*_i / y_i = sigma^2 u' / (r u)`; node 0 holds the limit
    /// `b(0) / (N sigma^2)`.
    pub demand_adjusted: Vec<f64>,
    pub n_goods: usize,
}

impl FeedbackPolicy {
    /// Interpolated `|p*|` at radius `r`.
    pub fn magnitude_at(&self, r: f64) -> Result<f64, PolicyError> {
        if !(r >= 0.0 && r <= self.grid.r_stop()) {
            return Err(PolicyError::OutOfDomain {
                norm: r,
                r_stop: self.grid.r_stop(),
            });
        }
        Ok(interpolate(&self.grid, &self.magnitude, r))
    }

    /// Writes `p*(y)` into `out` and returns `|p*(y)|`.
    pub fn eval_into(&self, y: &[f64], out: &mut [f64]) -> Result<f64, PolicyError> {
        if y.len() != self.n_goods || out.len() != self.n_goods {
            return Err(PolicyError::DimensionMismatch {
                expected: self.n_goods,
                got: y.len().min(out.len()),
            });
        }
        let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            out.fill(0.0);
            return Ok(0.0);
        }
        let magnitude = self.magnitude_at(norm)?;
        let scale = magnitude / norm;
        for (o, v) in out.iter_mut().zip(y) {
            *o = scale * v;
        }
        Ok(magnitude)
    }
}

pub fn feedback_policy(sol: &RadialSolution, params: &ModelParams) -> FeedbackPolicy {
    let s2 = params.sigma() * params.sigma();
    let nodes = sol.nodes();
    let magnitude: Vec<f64> = sol
        .u
        .iter()
        .zip(&sol.u_prime)
        .map(|(u, up)| s2 * up / u)
        .collect();
    let mut demand_adjusted: Vec<f64> = nodes
        .iter()
        .zip(&magnitude)
        .map(|(r, m)| m / r)
        .collect();
    demand_adjusted[0] = s2 * origin_growth_ratio(sol, params);
    FeedbackPolicy {
        grid: sol.grid.clone(),
        magnitude,
        demand_adjusted,
        n_goods: params.n_goods(),
    }
}

/// `lim_{r->0} u'/(r u) = u''(0)/u(0) = b(0) / (N sigma^4)`.
fn origin_growth_ratio(sol: &RadialSolution, params: &ModelParams) -> f64 {
    sol.cost.value(0.0) / (params.n_goods() as f64 * params.sigma4())
}

pub fn policy_eval(policy: &FeedbackPolicy, y: &[f64]) -> Result<Vec<f64>, PolicyError> {
    let mut out = vec![0.0; y.len()];
    policy.eval_into(y, &mut out)?;
    Ok(out)
}

/// Growth ratio `phi(r) = u'(r) / (r u(r))`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhiProfile {
    pub grid: RadialGrid,
    pub phi: Vec<f64>,
}

pub fn phi_profile(sol: &RadialSolution, params: &ModelParams) -> PhiProfile {
    let mut phi: Vec<f64> = sol
        .nodes()
        .iter()
        .zip(sol.u.iter().zip(&sol.u_prime))
        .map(|(r, (u, up))| up / (r * u))
        .collect();
    phi[0] = origin_growth_ratio(sol, params);
    PhiProfile {
        grid: sol.grid.clone(),
        phi,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CostSpec;
    use crate::radial_solver::solve_rk;

    fn solve(n: usize, sigma: f64, alpha: f64, radius: f64, cost: CostSpec, step: f64) -> (ModelParams, RadialSolution) {
        let p = ModelParams::new(n, sigma, alpha, radius).unwrap();
        let g = RadialGrid::new(radius, step).unwrap();
        let sol = solve_rk(&p, &cost, &g).unwrap();
        (p, sol)
    }

    const ONE: CostSpec = CostSpec::Constant { c0: 1.0 };

    #[test]
    fn cosh_oracle_value_function_and_control() {
        let (p, sol) = solve(1, 1.0, 1.0, 1.0, ONE, 1e-3);
        let vp = value_function(&sol, &p).unwrap();
        assert_eq!(vp.z[0], 0.0);
        let exact_z = -2.0 * 1.0f64.cosh().ln();
        assert!((vp.z0_boundary - exact_z).abs() < 1e-10);
        assert!((vp.z0_boundary - (-0.8675616610)).abs() < 1e-9);

        let fp = feedback_policy(&sol, &p);
        assert_eq!(fp.magnitude[0], 0.0);
        let m1 = *fp.magnitude.last().unwrap();
        assert!((m1 - 1.0f64.tanh()).abs() < 1e-10);
        assert!((m1 - 0.7615941560).abs() < 1e-9);

        let phi = phi_profile(&sol, &p);
        assert_eq!(phi.phi[0], 1.0);
        assert!((phi.phi.last().unwrap() - 0.7615941560).abs() < 1e-9);
        // decreasing: b = 1 violates b <= r^2 near the origin
        assert!(phi.phi.last().unwrap() < &phi.phi[0]);
    }

    #[test]
    fn quadratic_cost_phi_starts_at_zero_and_is_bounded() {
        let (p, sol) = solve(2, 2.0, 1.0, 10.0, CostSpec::Quadratic, 1e-3);
        let phi = phi_profile(&sol, &p);
        assert_eq!(phi.phi[0], 0.0);
        assert!(phi.phi.iter().all(|&f| f <= 0.25));
        let vp = value_function(&sol, &p).unwrap();
        assert!(vp.z0_boundary < 0.0);
        assert_eq!(vp.boundary_index, 10_000);
    }

    #[test]
    fn magnitude_is_alpha_invariant() {
        let base = feedback_policy(&solve(2, 2.0, 1.0, 10.0, CostSpec::Quadratic, 1e-2).1, &ModelParams::new(2, 2.0, 1.0, 10.0).unwrap());
        for alpha in [0.5, 2.0] {
            let (p, sol) = solve(2, 2.0, alpha, 10.0, CostSpec::Quadratic, 1e-2);
            let fp = feedback_policy(&sol, &p);
            for (a, b) in fp.magnitude.iter().zip(&base.magnitude) {
                assert!((a - b).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn policy_eval_is_radial() {
        let (p, sol) = solve(2, 2.0, 1.0, 10.0, CostSpec::Quadratic, 1e-2);
        let fp = feedback_policy(&sol, &p);
        assert_eq!(policy_eval(&fp, &[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);

        let r = 3.0;
        let out = policy_eval(&fp, &[r, 0.0]).unwrap();
        let idx = fp.grid.exact_index(r).unwrap();
        assert!((out[0] - fp.magnitude[idx]).abs() < 1e-12);
        assert_eq!(out[1], 0.0);

        let y = [2.0, 1.5];
        let theta = 0.7f64;
        let q = [
            theta.cos() * y[0] - theta.sin() * y[1],
            theta.sin() * y[0] + theta.cos() * y[1],
        ];
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let a = norm(&policy_eval(&fp, &y).unwrap());
        let b = norm(&policy_eval(&fp, &q).unwrap());
        assert!((a - b).abs() < 1e-12);

        assert!(matches!(
            policy_eval(&fp, &[10.0, 0.1]),
            Err(PolicyError::OutOfDomain { .. })
        ));
        assert!(matches!(
            policy_eval(&fp, &[1.0]),
            Err(PolicyError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn value_function_rejects_radius_beyond_grid() {
        let p = ModelParams::new(1, 1.0, 1.0, 5.0).unwrap();
        let g = RadialGrid::new(2.0, 1e-2).unwrap();
        let sol = solve_rk(&p, &ONE, &g).unwrap();
        assert!(matches!(
            value_function(&sol, &p),
            Err(PolicyError::RadiusOutsideGrid { .. })
        ));
    }

    #[test]
    fn nonpositive_u_is_reported() {
        let (p, mut sol) = solve(1, 1.0, 1.0, 1.0, ONE, 1e-2);
        sol.u[7] = -1.0;
        assert_eq!(
            value_function(&sol, &p),
            Err(PolicyError::NonPositiveU { node: 7, value: -1.0 })
        );
    }

    #[test]
    fn representations_agree() {
        let (p, sol) = solve(3, 1.5, 1.0, 6.0, CostSpec::Saturating { c: 0.8, cap: 9.0 }, 1e-3);
        let fp = feedback_policy(&sol, &p);
        let phi = phi_profile(&sol, &p);
        let s2 = p.sigma() * p.sigma();
        for ((r, m), f) in sol.nodes().iter().zip(&fp.magnitude).zip(&phi.phi).skip(1) {
            assert!((m - s2 * r * f).abs() <= 1e-12 * m.abs().max(1.0));
        }
    }
}
