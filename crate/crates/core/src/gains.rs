//! Class-K∞ comparison functions and the small-gain contraction test.
//!
//! A [`GainFunction`] bounds how much a behavior can amplify the asymptotic
//! amplitude (or the limit discrepancy) of its input. Gains compose under
//! cascades, and a feedback loop of two behaviors is certified when the
//! composed loop gain is a strict contraction: `γ1(γ2(r)) < r` for all
//! `r > 0`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GainError {
    #[error("gain evaluated at negative argument r = {0}")]
    NegativeArgument(f64),
    #[error("invalid gain function: {0}")]
    Invalid(String),
    #[error("contraction grid is empty: {0}")]
    EmptyGrid(String),
}

/// A comparison function `γ: [0, ∞) → [0, ∞)`.
///
/// `PiecewiseLinear` breakpoints are `(r, γ(r))` pairs with an implicit
/// origin `(0, 0)`; beyond the last breakpoint the final slope is extended.
/// `Composed([a, b, c])` evaluates as `a(b(c(r)))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum GainFunction {
    Linear(f64),
    PowerLaw { coeff: f64, exponent: f64 },
    PiecewiseLinear(Vec<(f64, f64)>),
    Composed(Vec<GainFunction>),
}

impl GainFunction {
    /// The identity gain `I(r) = r`.
    pub fn identity() -> Self {
        GainFunction::Linear(1.0)
    }

    /// The degenerate zero gain of a constant-output behavior. Not K∞, but
    /// satisfies every gain inequality vacuously.
    pub fn zero() -> Self {
        GainFunction::Linear(0.0)
    }

    pub fn is_zero_gain(&self) -> bool {
        match self {
            GainFunction::Linear(s) => *s == 0.0,
            GainFunction::Composed(parts) => parts.iter().any(GainFunction::is_zero_gain),
            _ => false,
        }
    }

    /// The slope when the function is linear in closed form.
    pub fn as_linear(&self) -> Option<f64> {
        match self {
            GainFunction::Linear(s) => Some(*s),
            GainFunction::Composed(parts) => parts
                .iter()
                .try_fold(1.0, |acc, p| p.as_linear().map(|s| acc * s)),
            _ => None,
        }
    }

    /// Checks the representation invariants. Zero-slope linear gains pass
    /// (see [`GainFunction::zero`]).
    pub fn validate(&self) -> Result<(), GainError> {
        match self {
            GainFunction::Linear(s) => {
                if !s.is_finite() || *s < 0.0 {
                    return Err(GainError::Invalid(format!("linear slope {s} must be finite and >= 0")));
                }
            }
            GainFunction::PowerLaw { coeff, exponent } => {
                if !(coeff.is_finite() && *coeff > 0.0 && exponent.is_finite() && *exponent > 0.0) {
                    return Err(GainError::Invalid(format!(
                        "power law needs coeff > 0 and exponent > 0, got coeff={coeff}, exponent={exponent}"
                    )));
                }
            }
            GainFunction::PiecewiseLinear(points) => {
                if points.is_empty() {
                    return Err(GainError::Invalid("piecewise-linear gain needs at least one breakpoint".into()));
                }
                let mut prev = (0.0, 0.0);
                for &(r, g) in points {
                    if !(r.is_finite() && g.is_finite()) || r <= prev.0 || g <= prev.1 {
                        return Err(GainError::Invalid(format!(
                            "breakpoints must be strictly increasing from the origin, got ({r}, {g}) after ({}, {})",
                            prev.0, prev.1
                        )));
                    }
                    prev = (r, g);
                }
            }
            GainFunction::Composed(parts) => {
                if parts.is_empty() {
                    return Err(GainError::Invalid("empty composition".into()));
                }
                for p in parts {
                    p.validate()?;
                }
            }
        }
        Ok(())
    }

    /// `γ(r)`. Exact for the closed forms; piecewise-linear gains interpolate.
    pub fn eval(&self, r: f64) -> Result<f64, GainError> {
        if r < 0.0 || r.is_nan() {
            return Err(GainError::NegativeArgument(r));
        }
        Ok(self.eval_unchecked(r))
    }

    fn eval_unchecked(&self, r: f64) -> f64 {
        match self {
            GainFunction::Linear(s) => s * r,
            GainFunction::PowerLaw { coeff, exponent } => coeff * r.powf(*exponent),
            GainFunction::PiecewiseLinear(points) => eval_piecewise(points, r),
            GainFunction::Composed(parts) => parts.iter().rev().fold(r, |acc, p| p.eval_unchecked(acc)),
        }
    }
}

fn eval_piecewise(points: &[(f64, f64)], r: f64) -> f64 {
    let mut prev = (0.0, 0.0);
    for &(x, y) in points {
        if r <= x {
            return prev.1 + (y - prev.1) * (r - prev.0) / (x - prev.0);
        }
        prev = (x, y);
    }
    // extend the final segment
    let n = points.len();
    let before = if n >= 2 { points[n - 2] } else { (0.0, 0.0) };
    let slope = (prev.1 - before.1) / (prev.0 - before.0);
    prev.1 + slope * (r - prev.0)
}

/// `outer ∘ inner`.
pub fn compose(outer: &GainFunction, inner: &GainFunction) -> GainFunction {
    use GainFunction::*;
    match (outer, inner) {
        (Linear(a), Linear(b)) => Linear(a * b),
        (Linear(a), g) | (g, Linear(a)) if *a == 1.0 => g.clone(),
        _ => {
            let mut parts = Vec::new();
            for g in [outer, inner] {
                match g {
                    Composed(inner_parts) => parts.extend(inner_parts.iter().cloned()),
                    other => parts.push(other.clone()),
                }
            }
            Composed(parts)
        }
    }
}

/// Log-spaced evaluation grid for the `∀ r > 0` check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub r_min: f64,
    pub r_max: f64,
    pub points_per_decade: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { r_min: 1e-9, r_max: 1e9, points_per_decade: 50 }
    }
}

impl GridSpec {
    pub fn points(&self) -> Result<Vec<f64>, GainError> {
        if !(self.r_min > 0.0 && self.r_max >= self.r_min && self.r_max.is_finite()) {
            return Err(GainError::EmptyGrid(format!("need 0 < r_min <= r_max, got [{}, {}]", self.r_min, self.r_max)));
        }
        if self.points_per_decade == 0 {
            return Err(GainError::EmptyGrid("points_per_decade = 0".into()));
        }
        let lo = self.r_min.log10();
        let hi = self.r_max.log10();
        let steps = ((hi - lo) * self.points_per_decade as f64).round() as usize;
        if steps == 0 {
            return Ok(vec![self.r_min]);
        }
        Ok((0..=steps)
            .map(|i| 10f64.powf(lo + (hi - lo) * i as f64 / steps as f64))
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContractionMethod {
    /// Both gains linear: decided by the slope product.
    Exact,
    /// Checked with a strictness margin on a log grid.
    Grid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionVerdict {
    pub holds: bool,
    /// An `r > 0` at which `γ1(γ2(r)) < r` fails (worst ratio on the grid).
    pub witness: Option<f64>,
    /// `sup γ1(γ2(r)) / r`: the slope product in the exact case, the grid
    /// maximum otherwise.
    pub loop_factor: f64,
    pub method: ContractionMethod,
}

/// Decides `γ1(γ2(r)) < r` for all `r > 0`.
///
/// Linear pairs are decided exactly (the product of slopes is compared with
/// 1). Otherwise the inequality `γ1(γ2(r)) <= (1 - margin) r` is checked at
/// every grid point, and the grid point with the worst ratio is reported as
/// witness on failure.
pub fn is_contraction(
    gamma1: &GainFunction,
    gamma2: &GainFunction,
    grid: &GridSpec,
    margin: f64,
) -> Result<ContractionVerdict, GainError> {
    gamma1.validate()?;
    gamma2.validate()?;
    if let (Some(a), Some(b)) = (gamma1.as_linear(), gamma2.as_linear()) {
        let product = a * b;
        let holds = product < 1.0;
        return Ok(ContractionVerdict {
            holds,
            witness: if holds { None } else { Some(1.0) },
            loop_factor: product,
            method: ContractionMethod::Exact,
        });
    }
    if !(margin > 0.0 && margin < 1.0) {
        return Err(GainError::Invalid(format!("margin must lie in (0, 1), got {margin}")));
    }
    let points = grid.points()?;
    let mut worst: Option<(f64, f64)> = None;
    let mut holds = true;
    for r in points {
        let value = gamma1.eval_unchecked(gamma2.eval_unchecked(r));
        if value > (1.0 - margin) * r {
            holds = false;
        }
        let ratio = value / r;
        if worst.is_none_or(|(_, w)| ratio > w) {
            worst = Some((r, ratio));
        }
    }
    let (worst_r, worst_ratio) = worst.ok_or_else(|| GainError::EmptyGrid("no grid points".into()))?;
    Ok(ContractionVerdict {
        holds,
        witness: if holds { None } else { Some(worst_r) },
        loop_factor: worst_ratio,
        method: ContractionMethod::Grid,
    })
}
