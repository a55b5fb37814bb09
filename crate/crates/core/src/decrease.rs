//! Decrease-function verification and gain extraction for ODE stages.
//!
//! For a stage `ẋ = −α(x) + u β(x)` and an input interval `U = [c, d]`, the
//! distance to `Z = [g⁻¹(c), g⁻¹(d)]` strictly decreases along the flow for
//! every `u ∈ U` outside `Z`. Trajectories driven by inputs converging to
//! `U` therefore converge to `Z`, and `|Z| <= λ |U|` with `λ` the Lipschitz
//! constant of `g⁻¹` on `U`: the stage has Cauchy gain and incremental
//! limit gain `λ I` on `U`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::behaviors::{lipschitz_upper_estimate, BehaviorError, CascadeSpec, ScalarMonotoneOde, StageSpec, DEFAULT_LIPSCHITZ_GRID};
use crate::gains::GainFunction;
use crate::signals::Interval;

/// Relative width of the probe collar around `U` used for Lipschitz
/// estimates, so that singleton intervals still get a derivative.
pub const PROBE_PAD: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecreaseError {
    #[error(transparent)]
    Behavior(#[from] BehaviorError),
    #[error("invalid input interval [{lo}, {hi}]: {reason}")]
    InputInterval { lo: f64, hi: f64, reason: String },
    #[error("invalid verification settings: {0}")]
    Settings(String),
    #[error("stage {stage}: {reason}")]
    Modeling { stage: usize, reason: String },
}

type ScalarField = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A candidate `V: [a, b] → [0, ∞)` with zero set `Z_V`.
#[derive(Clone)]
pub enum DecreaseFunction {
    /// `V(x) = dist(x, target)`; `Z_V = target`, `V' = ±1` off the target.
    DistanceToInterval(Interval),
    /// User-supplied `V`; `Z_V` is read off the verification grid.
    Custom { value: ScalarField, gradient: Option<ScalarField> },
}

impl fmt::Debug for DecreaseFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DecreaseFunction::DistanceToInterval(iv) => f.debug_tuple("DistanceToInterval").field(iv).finish(),
            DecreaseFunction::Custom { gradient, .. } => f
                .debug_struct("Custom")
                .field("gradient", &gradient.as_ref().map(|_| "fn"))
                .finish_non_exhaustive(),
        }
    }
}

impl DecreaseFunction {
    pub fn custom(value: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        DecreaseFunction::Custom { value: Arc::new(value), gradient: None }
    }

    pub fn value(&self, x: f64) -> f64 {
        match self {
            DecreaseFunction::DistanceToInterval(iv) => iv.distance(x),
            DecreaseFunction::Custom { value, .. } => value(x),
        }
    }

    /// Analytic gradient where one is known.
    fn gradient(&self, x: f64) -> Option<f64> {
        match self {
            DecreaseFunction::DistanceToInterval(iv) => {
                if x < iv.lo {
                    Some(-1.0)
                } else if x > iv.hi {
                    Some(1.0)
                } else {
                    None
                }
            }
            DecreaseFunction::Custom { gradient, .. } => gradient.as_ref().map(|g| g(x)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyGrid {
    pub n_x: usize,
    pub n_u: usize,
}

impl Default for VerifyGrid {
    fn default() -> Self {
        Self { n_x: 2001, n_u: 101 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecreaseWitness {
    pub x: f64,
    pub u: f64,
    pub directional_derivative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub ok: bool,
    pub witness: Option<DecreaseWitness>,
    /// Largest `V'(x) f(x, u)` over the checked grid; absent when nothing
    /// was checked.
    pub margin_found: Option<f64>,
    pub points_checked: usize,
    /// The zero set covered the whole state interval.
    pub vacuous: bool,
}

/// Default collar around `Z_V` excluded from the check.
pub fn default_exclusion_eps(stage: &ScalarMonotoneOde) -> f64 {
    1e-6 * stage.interval().width()
}

fn check_input_interval(u: Interval) -> Result<(), DecreaseError> {
    let bad = |reason: &str| DecreaseError::InputInterval { lo: u.lo, hi: u.hi, reason: reason.into() };
    if !(u.lo.is_finite() && u.hi.is_finite()) || u.lo > u.hi {
        return Err(bad("need finite lo <= hi"));
    }
    if u.lo < 0.0 {
        return Err(bad("ode stage inputs must be >= 0"));
    }
    Ok(())
}

/// Checks `V'(x) f(x, u) < 0` on a grid over `{x : dist(x, Z_V) >= eps} × U`.
///
/// The gradient comes from the decrease function when known, otherwise from
/// central differences with step `(b − a) / (10 n_x)`. On failure the grid
/// point with the largest directional derivative is the witness.
pub fn verify_u_decrease(
    v: &DecreaseFunction,
    stage: &ScalarMonotoneOde,
    u: Interval,
    exclusion_eps: f64,
    grid: VerifyGrid,
) -> Result<VerificationReport, DecreaseError> {
    check_input_interval(u)?;
    if !(exclusion_eps > 0.0) {
        return Err(DecreaseError::Settings(format!("exclusion_eps must be > 0, got {exclusion_eps}")));
    }
    if grid.n_x < 2 || grid.n_u < 1 {
        return Err(DecreaseError::Settings(format!("grid needs n_x >= 2 and n_u >= 1, got {grid:?}")));
    }
    let xs = stage.interval().grid(grid.n_x);
    let us = u.grid(grid.n_u);
    let h = stage.interval().width() / (10.0 * grid.n_x as f64);

    let zeros: Vec<f64> = match v {
        DecreaseFunction::DistanceToInterval(_) => Vec::new(),
        DecreaseFunction::Custom { .. } => xs.iter().copied().filter(|&x| v.value(x) == 0.0).collect(),
    };
    let dist_to_zero_set = |x: f64| -> f64 {
        match v {
            DecreaseFunction::DistanceToInterval(target) => target.distance(x),
            DecreaseFunction::Custom { .. } => zeros.iter().map(|z| (x - z).abs()).fold(f64::INFINITY, f64::min),
        }
    };

    let mut worst: Option<DecreaseWitness> = None;
    let mut checked = 0usize;
    for &x in &xs {
        if dist_to_zero_set(x) < exclusion_eps {
            continue;
        }
        let dv = v.gradient(x).unwrap_or_else(|| (v.value(x + h) - v.value(x - h)) / (2.0 * h));
        for &uu in &us {
            let dd = dv * stage.rhs(x, uu);
            checked += 1;
            if worst.is_none_or(|w| dd > w.directional_derivative) {
                worst = Some(DecreaseWitness { x, u: uu, directional_derivative: dd });
            }
        }
    }
    Ok(match worst {
        None => VerificationReport { ok: true, witness: None, margin_found: None, points_checked: 0, vacuous: true },
        Some(w) => {
            let ok = w.directional_derivative < 0.0;
            VerificationReport {
                ok,
                witness: if ok { None } else { Some(w) },
                margin_found: Some(w.directional_derivative),
                points_checked: checked,
                vacuous: false,
            }
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageGain {
    pub input: Interval,
    pub lambda: f64,
    pub gain: GainFunction,
    /// `[g⁻¹(c), g⁻¹(d)]`: where the state settles for inputs in `U`.
    pub z_set: Interval,
}

/// Linear gain `λ I` of an ODE stage on `U = [c, d]`, where `λ`
/// over-approximates the Lipschitz constant of `g⁻¹` on `U` widened by
/// [`PROBE_PAD`] (see [`lipschitz_upper_estimate`]), on a grid of up to
/// [`DEFAULT_LIPSCHITZ_GRID`] points.
pub fn stage_gain(stage: &ScalarMonotoneOde, u: Interval) -> Result<StageGain, DecreaseError> {
    check_input_interval(u)?;
    let g = stage.g_and_inverse()?;
    let pad = PROBE_PAD * u.width().max(1.0);
    let probe = Interval { lo: (u.lo - pad).max(0.0), hi: u.hi + pad };
    // cells narrower than ~1e-7 would be dominated by roundoff in g⁻¹
    let min_cell = 1e-7 * probe.hi.abs().max(1.0);
    let n_grid = ((probe.width() / min_cell) as usize + 1).clamp(2, DEFAULT_LIPSCHITZ_GRID);
    let lambda = lipschitz_upper_estimate(|x| g.g_inv(x), probe, n_grid)?;
    Ok(StageGain { input: u, lambda, gain: GainFunction::Linear(lambda), z_set: g.g_inv_interval(u) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainMode {
    /// Each stage's gain on the largest interval its input can occupy.
    Global,
    /// Gains on intervals propagated as `U_i = g_i⁻¹(U_{i−1})`.
    Relative,
}

impl fmt::Display for GainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GainMode::Global => "global",
            GainMode::Relative => "relative",
        })
    }
}

impl std::str::FromStr for GainMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "global" => Ok(GainMode::Global),
            "relative" => Ok(GainMode::Relative),
            other => Err(format!("unknown mode `{other}` (expected global or relative)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageGainRow {
    pub index: usize,
    pub kind: String,
    pub input_interval: Interval,
    pub lambda: f64,
    /// The interval the stage output converges to (the zero set for ODE
    /// stages).
    pub z_set: Interval,
    /// Decrease check of `dist(·, z_set)` on the input interval (ODE stages).
    pub decrease: Option<VerificationReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeGain {
    pub mode: GainMode,
    pub gain: GainFunction,
    pub per_stage: Vec<StageGainRow>,
    pub output_interval: Interval,
}

/// Composes stage gains along the cascade (feedback ignored).
///
/// Delays contribute factor 1 and leave the interval unchanged; memoryless
/// maps contribute their Lipschitz constant on the current interval and map
/// it; ODE stages contribute `λ_i` from [`stage_gain`]. In global mode an
/// ODE stage passes on its whole state interval, in relative mode only its
/// zero set `g_i⁻¹(U_{i−1})`.
pub fn cascade_gain(cascade: &CascadeSpec, u0: Interval, mode: GainMode) -> Result<CascadeGain, DecreaseError> {
    walk_cascade(cascade, u0, mode, true)
}

/// The slope of [`cascade_gain`] without the per-stage decrease checks.
pub fn cascade_lambda(cascade: &CascadeSpec, u0: Interval, mode: GainMode) -> Result<f64, DecreaseError> {
    Ok(walk_cascade(cascade, u0, mode, false)?.gain.as_linear().unwrap_or(f64::NAN))
}

fn walk_cascade(cascade: &CascadeSpec, u0: Interval, mode: GainMode, verify: bool) -> Result<CascadeGain, DecreaseError> {
    let mut current = u0;
    let mut product = 1.0;
    let mut rows = Vec::with_capacity(cascade.stages().len());
    for (index, stage) in cascade.stages().iter().enumerate() {
        let modeling = |e: &dyn fmt::Display| DecreaseError::Modeling { stage: index, reason: e.to_string() };
        let (lambda, z_set, decrease) = match stage {
            StageSpec::Delay(_) => (1.0, current, None),
            StageSpec::Memoryless(map) => {
                let lambda = map.lipschitz_on(current).map_err(|e| modeling(&e))?;
                (lambda, map.map_interval(current).map_err(|e| modeling(&e))?, None)
            }
            StageSpec::Ode(ode) => {
                if current.lo < 0.0 {
                    return Err(modeling(&format!(
                        "propagated input interval [{}, {}] leaves the admissible range [0, inf)",
                        current.lo, current.hi
                    )));
                }
                let sg = stage_gain(ode, current).map_err(|e| modeling(&e))?;
                let report = if verify {
                    Some(verify_u_decrease(
                        &DecreaseFunction::DistanceToInterval(sg.z_set),
                        ode,
                        current,
                        default_exclusion_eps(ode),
                        VerifyGrid::default(),
                    )?)
                } else {
                    None
                };
                (sg.lambda, sg.z_set, report)
            }
        };
        rows.push(StageGainRow {
            index,
            kind: stage.kind().to_string(),
            input_interval: current,
            lambda,
            z_set,
            decrease,
        });
        product *= lambda;
        current = match (mode, stage) {
            (GainMode::Global, StageSpec::Ode(ode)) => ode.interval(),
            _ => z_set,
        };
    }
    Ok(CascadeGain { mode, gain: GainFunction::Linear(product), per_stage: rows, output_interval: current })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::behaviors::{Feedback, ScalarFn};
    use proptest::prelude::*;

    fn enzyme() -> ScalarMonotoneOde {
        ScalarMonotoneOde::new(
            ScalarFn::Affine { slope: 1.0, intercept: 0.0 },
            ScalarFn::Affine { slope: -1.0, intercept: 1.0 },
            Interval { lo: 0.0, hi: 1.0 },
        )
        .unwrap()
    }

    // oracle: g⁻¹(u) = u / (1 + u), (g⁻¹)'(u) = 1 / (1 + u)²
    fn ginv(u: f64) -> f64 {
        u / (1.0 + u)
    }
    fn dginv(u: f64) -> f64 {
        1.0 / (1.0 + u).powi(2)
    }

    #[test]
    fn centered_distance_is_a_decrease_function() {
        let stage = enzyme();
        let r = verify_u_decrease(
            &DecreaseFunction::DistanceToInterval(Interval::point(0.5)),
            &stage,
            Interval::point(1.0),
            default_exclusion_eps(&stage),
            VerifyGrid::default(),
        )
        .unwrap();
        assert!(r.ok);
        assert!(r.witness.is_none());
        assert!(r.margin_found.unwrap() < 0.0);
        assert_eq!(r.points_checked, 2000);
    }

    #[test]
    fn miscentered_distance_fails_with_witness() {
        let stage = enzyme();
        let r = verify_u_decrease(
            &DecreaseFunction::DistanceToInterval(Interval::point(0.9)),
            &stage,
            Interval::point(1.0),
            default_exclusion_eps(&stage),
            VerifyGrid::default(),
        )
        .unwrap();
        assert!(!r.ok);
        // V' = −1 left of 0.9 and f(x, 1) = 1 − 2x: the worst grid point is
        // the last one before the target, x = 0.8995, with 2x − 1 = 0.799
        let w = r.witness.unwrap();
        assert!((w.x - 0.8995).abs() < 1e-12, "{w:?}");
        assert_eq!(w.u, 1.0);
        assert!((w.directional_derivative - 0.799).abs() < 1e-12);
    }

    #[test]
    fn custom_decrease_uses_finite_differences() {
        let stage = enzyme();
        let v = DecreaseFunction::custom(|x| (x - 0.5).powi(2));
        let r = verify_u_decrease(&v, &stage, Interval::point(1.0), 1e-3, VerifyGrid::default()).unwrap();
        assert!(r.ok, "{r:?}");
        let bad = DecreaseFunction::custom(|x| (x - 0.2).powi(2));
        let r = verify_u_decrease(&bad, &stage, Interval::point(1.0), 1e-3, VerifyGrid::default()).unwrap();
        assert!(!r.ok);
        let w = r.witness.unwrap();
        assert!(w.x > 0.2 && w.x < 0.5);
    }

    #[test]
    fn whole_interval_zero_set_is_vacuous() {
        let stage = enzyme();
        let r = verify_u_decrease(
            &DecreaseFunction::DistanceToInterval(Interval { lo: -1.0, hi: 2.0 }),
            &stage,
            Interval::point(1.0),
            1e-6,
            VerifyGrid::default(),
        )
        .unwrap();
        assert!(r.ok && r.vacuous);
        assert_eq!(r.margin_found, None);
    }

    #[test]
    fn verification_rejects_bad_settings() {
        let stage = enzyme();
        let v = DecreaseFunction::DistanceToInterval(Interval::point(0.5));
        assert!(verify_u_decrease(&v, &stage, Interval { lo: -1.0, hi: 1.0 }, 1e-6, VerifyGrid::default()).is_err());
        assert!(verify_u_decrease(&v, &stage, Interval::point(1.0), 0.0, VerifyGrid::default()).is_err());
        assert!(verify_u_decrease(&v, &stage, Interval::point(1.0), 1e-6, VerifyGrid { n_x: 1, n_u: 1 }).is_err());
    }

    #[test]
    fn stage_gain_examples() {
        let stage = enzyme();
        let sg = stage_gain(&stage, Interval { lo: 0.0, hi: 10.0 }).unwrap();
        assert!((sg.lambda - 1.0).abs() < 1e-3);
        assert_eq!(sg.z_set.lo, 0.0);
        assert!((sg.z_set.hi - 10.0 / 11.0).abs() < 1e-12);

        let sg = stage_gain(&stage, Interval::point(2.0)).unwrap();
        assert_eq!(sg.z_set.width(), 0.0);
        assert!((sg.lambda - dginv(2.0)).abs() < 1e-6);

        let sg = stage_gain(&stage, Interval { lo: 1.6, hi: 2.0 }).unwrap();
        assert!((sg.lambda - dginv(1.6)).abs() < 1e-4);
        assert!((sg.z_set.lo - 0.6154).abs() < 1e-3);
        assert!((sg.z_set.hi - 0.6667).abs() < 1e-3);
    }

    #[test]
    fn cascade_gain_modes() {
        let stage = enzyme();
        let one = CascadeSpec::new(vec![StageSpec::Ode(stage.clone())], None).unwrap();
        let cg = cascade_gain(&one, Interval { lo: 0.0, hi: 10.0 }, GainMode::Global).unwrap();
        let sg = stage_gain(&stage, Interval { lo: 0.0, hi: 10.0 }).unwrap();
        assert_eq!(cg.gain, sg.gain);

        let two = CascadeSpec::new(vec![StageSpec::Ode(stage.clone()), StageSpec::Ode(stage)], None).unwrap();
        let global = cascade_gain(&two, Interval { lo: 0.0, hi: 10.0 }, GainMode::Global).unwrap();
        assert!((global.gain.as_linear().unwrap() - 1.0).abs() < 2e-3);
        assert_eq!(global.per_stage[1].input_interval, Interval { lo: 0.0, hi: 1.0 });

        let u0 = Interval { lo: 1.6, hi: 2.0 };
        let rel = cascade_gain(&two, u0, GainMode::Relative).unwrap();
        let l1 = dginv(1.6);
        let u1 = Interval { lo: ginv(1.6), hi: ginv(2.0) };
        let l2 = dginv(u1.lo);
        assert!((rel.per_stage[0].lambda - l1).abs() < 1e-4);
        assert!((rel.per_stage[1].input_interval.lo - u1.lo).abs() < 1e-10);
        assert!((rel.per_stage[1].input_interval.hi - u1.hi).abs() < 1e-10);
        assert!((rel.per_stage[1].lambda - l2).abs() < 1e-4);
        assert!((rel.gain.as_linear().unwrap() - l1 * l2).abs() < 1e-4);
        assert!((rel.gain.as_linear().unwrap() - 0.056689).abs() < 1e-4);
        assert!(rel.per_stage.iter().all(|r| r.decrease.as_ref().is_none_or(|d| d.ok)));
    }

    #[test]
    fn memoryless_and_delay_stages_propagate_intervals() {
        let stage = enzyme();
        let c = CascadeSpec::new(
            vec![
                StageSpec::Ode(stage.clone()),
                StageSpec::Delay(1.0),
                StageSpec::Memoryless(crate::behaviors::MemorylessMap::Scale(3.0)),
                StageSpec::Ode(stage.clone()),
            ],
            None,
        )
        .unwrap();
        let cg = cascade_gain(&c, Interval { lo: 1.0, hi: 2.0 }, GainMode::Relative).unwrap();
        assert_eq!(cg.per_stage[1].lambda, 1.0);
        assert_eq!(cg.per_stage[2].lambda, 3.0);
        let z1 = cg.per_stage[0].z_set;
        assert!((cg.per_stage[3].input_interval.lo - 3.0 * z1.lo).abs() < 1e-12);

        let negative = CascadeSpec::new(
            vec![
                StageSpec::Ode(stage.clone()),
                StageSpec::Memoryless(crate::behaviors::MemorylessMap::Scale(-1.0)),
                StageSpec::Ode(stage),
            ],
            None,
        )
        .unwrap();
        assert!(matches!(
            cascade_gain(&negative, Interval { lo: 1.0, hi: 2.0 }, GainMode::Global),
            Err(DecreaseError::Modeling { stage: 2, .. })
        ));
    }

    #[test]
    fn feedback_is_ignored_by_forward_gain() {
        let c = CascadeSpec::enzyme_chain(2, 2.0, 0.25, 0.5).unwrap();
        let open = c.with_feedback(None).unwrap();
        let u0 = Interval { lo: 0.0, hi: 2.0 };
        assert_eq!(
            cascade_gain(&c, u0, GainMode::Global).unwrap(),
            cascade_gain(&open, u0, GainMode::Global).unwrap()
        );
        let _ = Feedback { mu: 2.0, k: 0.25, tau_n: 0.5 };
    }

    proptest! {
        #![proptest_config(ProptestConfig { cases: 24, .. ProptestConfig::default() })]

        #[test]
        fn zero_set_diameter_is_bounded_by_gain(
            stage in crate::behaviors::tests::arb_stage(),
            c in 0.0f64..5.0,
            w in 0.0f64..5.0,
        ) {
            let u = Interval { lo: c, hi: c + w };
            let sg = stage_gain(&stage, u).unwrap();
            prop_assert!(sg.z_set.width() <= sg.lambda * u.width() + 1e-9,
                "|Z| = {} > {} * {}", sg.z_set.width(), sg.lambda, u.width());
        }

        #[test]
        fn matched_distance_always_decreases(
            stage in crate::behaviors::tests::arb_stage(),
            c in 0.0f64..5.0,
            w in 0.0f64..5.0,
        ) {
            let u = Interval { lo: c, hi: c + w };
            let g = stage.g_and_inverse().unwrap();
            let v = DecreaseFunction::DistanceToInterval(g.g_inv_interval(u));
            let r = verify_u_decrease(&v, &stage, u, default_exclusion_eps(&stage), VerifyGrid { n_x: 401, n_u: 21 }).unwrap();
            prop_assert!(r.ok, "{r:?}");
        }

        #[test]
        fn relative_gain_never_exceeds_global(c in 0.0f64..3.0, w in 0.0f64..2.0, n in 1usize..4) {
            let cascade = CascadeSpec::enzyme_chain(n, 5.0, 0.0, 0.0).unwrap().with_feedback(None).unwrap();
            let u0 = Interval { lo: c, hi: c + w };
            let g = cascade_gain(&cascade, u0, GainMode::Global).unwrap().gain.as_linear().unwrap();
            let r = cascade_gain(&cascade, u0, GainMode::Relative).unwrap().gain.as_linear().unwrap();
            prop_assert!(r <= g + 1e-9, "relative {r} > global {g}");
        }
    }
}
