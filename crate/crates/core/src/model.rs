//! Problem parameters and the admissible family of inventory-cost functions.
//!
//! The running cost of the planning problem is `|p|^2 + b(|y|)`, where the
//! inventory cost `b` must be continuous, nondecreasing and satisfy
//! `0 < b(x) <= x^2` for `x > 0`. [`CostSpec`] fixes a small closed-form
//! family with that property, plus a constant cost that is only admitted for
//! closed-form test oracles.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("n_goods must be at least 1")]
    ZeroGoods,
    #[error("sigma must be positive and finite, got {0}")]
    NonPositiveSigma(f64),
    #[error("alpha must be positive and finite, got {0}")]
    NonPositiveAlpha(f64),
    #[error("radius must be positive and finite, got {0}")]
    NonPositiveRadius(f64),
    #[error("cost evaluated at negative radius {0}")]
    NegativeRadius(f64),
    #[error("cost {kind} violates 0 < b(x) <= x^2: {reason}")]
    BoundViolation { kind: &'static str, reason: String },
    #[error("constant cost is test-only and requires allow_test_only = true")]
    TestOnlyKindRejected,
}

/// Unvalidated parameter record, as read from a config file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RawModelParams {
    pub n_goods: usize,
    pub sigma: f64,
    pub alpha: f64,
    pub radius: f64,
}

impl Default for RawModelParams {
    fn default() -> Self {
        Self {
            n_goods: 2,
            sigma: 2.0,
            alpha: 1.0,
            radius: 10.0,
        }
    }
}

/// Validated model parameters: dimension `N`, volatility `sigma`, initial
/// value `alpha = u(0)` and the inventory-norm threshold `R`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    n_goods: usize,
    sigma: f64,
    alpha: f64,
    radius: f64,
}

fn positive_finite(x: f64) -> bool {
    x.is_finite() && x > 0.0
}

pub fn validate_params(raw: &RawModelParams) -> Result<ModelParams, ModelError> {
    if raw.n_goods == 0 {
        return Err(ModelError::ZeroGoods);
    }
    if !positive_finite(raw.sigma) {
        return Err(ModelError::NonPositiveSigma(raw.sigma));
    }
    if !positive_finite(raw.alpha) {
        return Err(ModelError::NonPositiveAlpha(raw.alpha));
    }
    if !positive_finite(raw.radius) {
        return Err(ModelError::NonPositiveRadius(raw.radius));
    }
    Ok(ModelParams {
        n_goods: raw.n_goods,
        sigma: raw.sigma,
        alpha: raw.alpha,
        radius: raw.radius,
    })
}

impl ModelParams {
    pub fn new(n_goods: usize, sigma: f64, alpha: f64, radius: f64) -> Result<Self, ModelError> {
        validate_params(&RawModelParams {
            n_goods,
            sigma,
            alpha,
            radius,
        })
    }

    pub fn n_goods(&self) -> usize {
        self.n_goods
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// `sigma^4`, the scale of the linear radial equation.
    pub fn sigma4(&self) -> f64 {
        let s2 = self.sigma * self.sigma;
        s2 * s2
    }

    pub fn to_raw(&self) -> RawModelParams {
        RawModelParams {
            n_goods: self.n_goods,
            sigma: self.sigma,
            alpha: self.alpha,
            radius: self.radius,
        }
    }
}

/// Inventory-cost function `b(r)`.
///
/// Variants are plain data so a degenerate cost (for example
/// `Constant { c0: 0.0 }`, i.e. `b == 0`) can be built directly in tests;
/// anything coming from user input goes through [`validate_cost`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CostSpec {
    /// `b(r) = r^2`
    Quadratic,
    /// `b(r) = c r^2`, `0 < c <= 1`
    ScaledQuadratic { c: f64 },
    /// `b(r) = min(c r^2, cap)`, `0 < c <= 1`, `cap > 0`
    Saturating { c: f64, cap: f64 },
    /// `b(r) = c0`; test-only, violates `b(x) <= x^2` near zero.
    Constant { c0: f64 },
}

impl CostSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            CostSpec::Quadratic => "quadratic",
            CostSpec::ScaledQuadratic { .. } => "scaled_quadratic",
            CostSpec::Saturating { .. } => "saturating",
            CostSpec::Constant { .. } => "constant",
        }
    }

    /// `b(r)` without the domain check. Callers guarantee `r >= 0`.
    #[inline]
    pub fn value(&self, r: f64) -> f64 {
        match *self {
            CostSpec::Quadratic => r * r,
            CostSpec::ScaledQuadratic { c } => c * r * r,
            CostSpec::Saturating { c, cap } => (c * r * r).min(cap),
            CostSpec::Constant { c0 } => c0,
        }
    }

    /// Coefficients `(b0, b2)` with `b(r) = b0 + b2 r^2` on a neighbourhood
    /// of the origin. Exact for every member of the family.
    pub fn expansion_at_origin(&self) -> (f64, f64) {
        match *self {
            CostSpec::Quadratic => (0.0, 1.0),
            CostSpec::ScaledQuadratic { c } => (0.0, c),
            CostSpec::Saturating { c, cap } => {
                if cap > 0.0 {
                    (0.0, c)
                } else {
                    (cap, 0.0)
                }
            }
            CostSpec::Constant { c0 } => (c0, 0.0),
        }
    }

    /// Whether `b(r) <= r^2` holds for every `r >= 0`, the hypothesis under
    /// which the growth ratio is bounded by `1/sigma^2` and nondecreasing.
    /// Read off the closed form, not sampled.
    pub fn bounded_by_square(&self) -> bool {
        match *self {
            CostSpec::Quadratic => true,
            CostSpec::ScaledQuadratic { c } | CostSpec::Saturating { c, .. } => c <= 1.0,
            CostSpec::Constant { c0 } => c0 <= 0.0,
        }
    }

    /// True when `b` vanishes identically.
    pub fn is_zero(&self) -> bool {
        match *self {
            CostSpec::Quadratic => false,
            CostSpec::ScaledQuadratic { c } => c == 0.0,
            CostSpec::Saturating { c, cap } => c == 0.0 || cap == 0.0,
            CostSpec::Constant { c0 } => c0 == 0.0,
        }
    }
}

pub fn eval_cost(spec: &CostSpec, r: f64) -> Result<f64, ModelError> {
    if r.is_nan() || r < 0.0 {
        return Err(ModelError::NegativeRadius(r));
    }
    Ok(spec.value(r))
}

fn check_scale(kind: &'static str, c: f64) -> Result<(), ModelError> {
    if !positive_finite(c) {
        return Err(ModelError::BoundViolation {
            kind,
            reason: format!("scale c = {c} must be positive and finite"),
        });
    }
    if c > 1.0 {
        return Err(ModelError::BoundViolation {
            kind,
            reason: format!("scale c = {c} > 1 gives b(x) > x^2"),
        });
    }
    Ok(())
}

pub fn validate_cost(spec: &CostSpec, allow_test_only: bool) -> Result<CostSpec, ModelError> {
    match *spec {
        CostSpec::Quadratic => {}
        CostSpec::ScaledQuadratic { c } => check_scale("scaled_quadratic", c)?,
        CostSpec::Saturating { c, cap } => {
            check_scale("saturating", c)?;
            if !positive_finite(cap) {
                return Err(ModelError::BoundViolation {
                    kind: "saturating",
                    reason: format!("cap = {cap} must be positive and finite"),
                });
            }
        }
        CostSpec::Constant { c0 } => {
            if !allow_test_only {
                return Err(ModelError::TestOnlyKindRejected);
            }
            if !positive_finite(c0) {
                return Err(ModelError::BoundViolation {
                    kind: "constant",
                    reason: format!("c0 = {c0} must be positive and finite"),
                });
            }
        }
    }
    Ok(*spec)
}
