//! Small-gain certificates for inhibitory feedback cascades and their
//! empirical validation.
//!
//! The loop is split into the forward cascade (gain `γ`, composed from the
//! stage gains) and the inhibitory closure `ψ(y) = μ/(1 + k y)` (gain `kμ`).
//! If `γ(kμ r) < r` for all `r > 0`, every closed-loop solution converges,
//! and all of them to the same limit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::behaviors::{BehaviorError, CascadeSpec, Feedback, History, ScalarMonotoneOde, StageSpec};
use crate::decrease::{cascade_gain, cascade_lambda, DecreaseError, GainMode, StageGainRow};
use crate::gains::{is_contraction, ContractionVerdict, GainError, GainFunction, GridSpec};
use crate::signals::{asymptotic_amplitude, limit_value, Interval, Signal, SignalError, DEFAULT_TAIL_FRACTION};
use crate::simulate::{ensemble, simulate_open, SimConfig, SimError};

/// Bisection tolerance for the closed-loop fixed point.
pub const FIXED_POINT_TOL: f64 = 1e-12;
/// Strictness margin handed to the contraction check for nonlinear gains.
pub const CONTRACTION_MARGIN: f64 = 1e-6;
/// Relative precision of the numerically located relative-mode `k_max`.
pub const K_MAX_REL_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum CertifyError {
    #[error("the cascade has no feedback block")]
    NoFeedback,
    #[error("the certificate does not hold; nothing to validate")]
    NotCertified,
    #[error("invalid settings: {0}")]
    Settings(String),
    #[error("input generator left [{lo}, {hi}] (input {index}): value {value}")]
    GeneratorEscape { index: usize, value: f64, lo: f64, hi: f64 },
    #[error("cascade output range [{lo}, {hi}] is outside the feedback domain [0, inf)")]
    OutputRange { lo: f64, hi: f64 },
    #[error(transparent)]
    Decrease(#[from] DecreaseError),
    #[error(transparent)]
    Gain(#[from] GainError),
    #[error(transparent)]
    Behavior(#[from] BehaviorError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Signal(#[from] SignalError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    pub config_digest: Option<String>,
}

/// The results this certificate rests on, stated without proof.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryAnchor {
    pub convergence: String,
    pub uniqueness: String,
    pub cascade_bound: String,
}

impl Default for TheoryAnchor {
    fn default() -> Self {
        Self {
            convergence: "small-gain principle for the asymptotic amplitude: if the loop signals are ultimately \
                          bounded and γ1(γ2(r)) < r for all r > 0, every loop signal has zero asymptotic \
                          amplitude, i.e. converges"
                .into(),
            uniqueness: "small-gain principle with uniqueness: if in addition κ1(κ2(r)) < r for all r > 0 for the \
                         incremental limit gains, all closed-loop solutions share one limit pair (ū, ȳ)"
                .into(),
            cascade_bound: "monotone cascade with inhibitory feedback μ/(1 + k y): convergence for \
                            k < 1/(μ λ1 ⋯ λn), λi the Lipschitz constant of gi⁻¹ where gi = αi/βi"
                .into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub provenance: Provenance,
    pub mode: GainMode,
    pub feedback: Feedback,
    /// Interval the first-stage input is assumed to converge into.
    pub input_interval: Interval,
    pub per_stage: Vec<StageGainRow>,
    pub forward_gain: GainFunction,
    pub feedback_gain: GainFunction,
    /// `sup γ(kμ r) / r`, the number compared with 1.
    pub loop_factor: f64,
    pub contraction: ContractionVerdict,
    /// Every ODE stage passed its decrease check.
    pub decrease_verified: bool,
    /// Contraction holds and every decrease check passed.
    pub holds: bool,
    /// Supremum of feedback gains `k` for which the check passes, all else
    /// fixed. `None` when it passes for every `k` tried.
    pub k_max: Option<f64>,
    /// Limits of the ODE stage states, in cascade order.
    pub predicted_limits: Option<Vec<f64>>,
    /// Limit `ū` of the first-stage input.
    pub predicted_input: Option<f64>,
    pub notes: Vec<String>,
    pub theory_anchor: TheoryAnchor,
}

/// Range of the cascade output, i.e. of the argument of `ψ`.
fn output_range(cascade: &CascadeSpec) -> Result<Interval, CertifyError> {
    let mut current: Option<Interval> = None;
    for stage in cascade.stages() {
        match stage {
            StageSpec::Ode(ode) => current = Some(ode.interval()),
            StageSpec::Memoryless(m) => {
                if let Some(iv) = current {
                    current = Some(m.map_interval(iv)?);
                }
            }
            StageSpec::Delay(_) => {}
        }
    }
    let iv = current.expect("cascade has an ode stage");
    if iv.lo < 0.0 {
        return Err(CertifyError::OutputRange { lo: iv.lo, hi: iv.hi });
    }
    Ok(iv)
}

/// `U₀` for the given mode and feedback.
pub fn input_interval(cascade: &CascadeSpec, fb: &Feedback, mode: GainMode) -> Result<Interval, CertifyError> {
    match mode {
        GainMode::Global => Ok(Interval { lo: 0.0, hi: fb.mu }),
        GainMode::Relative => {
            let y = output_range(cascade)?;
            Ok(Interval { lo: fb.mu / (1.0 + fb.k * y.hi), hi: fb.mu / (1.0 + fb.k * y.lo) })
        }
    }
}

fn loop_factor_at(cascade: &CascadeSpec, fb: &Feedback, k: f64, mode: GainMode) -> Result<f64, CertifyError> {
    let fb = Feedback { k, ..*fb };
    let u0 = input_interval(cascade, &fb, mode)?;
    Ok(cascade_lambda(cascade, u0, mode)? * fb.lipschitz())
}

fn relative_k_max(cascade: &CascadeSpec, fb: &Feedback, start: f64) -> Result<Option<f64>, CertifyError> {
    let holds = |k: f64| -> Result<bool, CertifyError> { Ok(loop_factor_at(cascade, fb, k, GainMode::Relative)? < 1.0) };
    let mut lo = 0.0;
    let mut hi = start.max(1e-3);
    let mut doublings = 0;
    while holds(hi)? {
        lo = hi;
        hi *= 2.0;
        doublings += 1;
        if doublings > 60 {
            return Ok(None);
        }
    }
    while hi - lo > K_MAX_REL_TOL * hi {
        let mid = 0.5 * (lo + hi);
        if holds(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Some(hi))
}

/// Equilibria of the ODE stages and the cascade output for a constant
/// first-stage input `u`.
fn constant_response(cascade: &CascadeSpec, u: f64) -> Result<(Vec<f64>, f64), CertifyError> {
    let mut v = u;
    let mut states = Vec::new();
    for stage in cascade.stages() {
        match stage {
            StageSpec::Delay(_) => {}
            StageSpec::Memoryless(m) => v = m.eval(v)?,
            StageSpec::Ode(ode) => {
                v = ode.g_and_inverse()?.g_inv(v);
                states.push(v);
            }
        }
    }
    Ok((states, v))
}

/// Solves `y = F(ψ(y))` on the output range by bisection, `F` being the
/// constant-input response of the cascade.
fn fixed_point(cascade: &CascadeSpec, fb: &Feedback) -> Result<(Vec<f64>, f64), CertifyError> {
    let range = output_range(cascade)?;
    let psi = fb.psi();
    let residual = |y: f64| -> Result<f64, CertifyError> { Ok(constant_response(cascade, psi.eval(y)?)?.1 - y) };
    let (mut lo, mut hi) = (range.lo, range.hi);
    if residual(lo)? <= 0.0 {
        hi = lo;
    } else if residual(hi)? >= 0.0 {
        lo = hi;
    }
    while hi - lo > FIXED_POINT_TOL {
        let mid = 0.5 * (lo + hi);
        if residual(mid)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let u = psi.eval(0.5 * (lo + hi))?;
    Ok((constant_response(cascade, u)?.0, u))
}

fn notes(mode: GainMode) -> Vec<String> {
    let mut notes = vec![
        "forward and feedback gains are both linear, so the convergence condition γ(kμ r) < r and the \
         uniqueness condition on the incremental limit gains coincide and reduce to the single scalar test \
         kμ·∏λi < 1"
            .to_string(),
        "ultimate boundedness holds automatically: every state is confined to its compact interval and ψ maps \
         [0, inf) into [0, μ]"
            .to_string(),
        "the closed-loop behavior is assumed nonempty; simulations construct members of it".to_string(),
        "gain hypotheses are verified only on the finitely many input intervals listed per stage, not on every \
         compact input set"
            .to_string(),
        "the certificate is sufficient only; a failing check makes no claim about oscillation".to_string(),
    ];
    if mode == GainMode::Relative {
        notes.push(
            "relative mode propagates input intervals as U(i) = gi⁻¹(U(i-1)) starting from \
             U0 = [μ/(1 + k·b), μ/(1 + k·a)] with [a, b] the cascade output range"
                .to_string(),
        );
    }
    notes
}

/// Builds the certificate for the loop closed by `cascade.feedback()`.
///
/// Deterministic: equal inputs give equal certificates, float for float.
pub fn certify(cascade: &CascadeSpec, mode: GainMode, config_digest: Option<String>) -> Result<Certificate, CertifyError> {
    let fb = *cascade.feedback().ok_or(CertifyError::NoFeedback)?;
    let u0 = input_interval(cascade, &fb, mode)?;
    let forward = cascade_gain(cascade, u0, mode)?;
    let feedback_gain = GainFunction::Linear(fb.lipschitz());
    let contraction = is_contraction(&forward.gain, &feedback_gain, &GridSpec::default(), CONTRACTION_MARGIN)?;
    let decrease_verified = forward.per_stage.iter().all(|r| r.decrease.as_ref().is_none_or(|d| d.ok));
    let holds = contraction.holds && decrease_verified;
    let lambda = forward.gain.as_linear().unwrap_or(f64::NAN);

    let k_max = match mode {
        GainMode::Global => {
            let slope = fb.mu * lambda;
            (slope > 0.0).then(|| 1.0 / slope)
        }
        GainMode::Relative => {
            let global = cascade_lambda(cascade, input_interval(cascade, &fb, GainMode::Global)?, GainMode::Global)?;
            relative_k_max(cascade, &fb, 1.0 / (fb.mu * global).max(f64::MIN_POSITIVE))?
        }
    };
    let (predicted_limits, predicted_input) = if holds {
        let (states, u) = fixed_point(cascade, &fb)?;
        (Some(states), Some(u))
    } else {
        (None, None)
    };

    Ok(Certificate {
        provenance: Provenance { tool_version: env!("CARGO_PKG_VERSION").to_string(), config_digest },
        mode,
        feedback: fb,
        input_interval: u0,
        per_stage: forward.per_stage,
        forward_gain: forward.gain,
        feedback_gain,
        loop_factor: contraction.loop_factor,
        contraction,
        decrease_verified,
        holds,
        k_max,
        predicted_limits,
        predicted_input,
        notes: notes(mode),
        theory_anchor: TheoryAnchor::default(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub n_runs: usize,
    pub tol: f64,
    pub all_converged: bool,
    /// Largest spread, over states, of the per-run limits.
    pub max_limit_spread: f64,
    /// Largest distance between a run limit and the predicted limit.
    pub max_prediction_error: f64,
    /// Per-run limits of the ODE stage states; `None` if a run did not settle.
    pub per_run_limits: Vec<Option<Vec<f64>>>,
    pub failed_runs: Vec<usize>,
    /// Set when a certified loop failed to converge in simulation. Points at
    /// the numerics or the implementation, never at the certificate's logic.
    pub alarm: Option<String>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.all_converged && self.max_prediction_error <= self.tol
    }
}

/// Simulates `n_runs` closed-loop members from seeded random histories and
/// checks that all settle, to one limit, at the predicted values.
pub fn validate_certificate(
    cert: &Certificate,
    cascade: &CascadeSpec,
    config: SimConfig,
    n_runs: usize,
    tol: f64,
) -> Result<ValidationReport, CertifyError> {
    if !cert.holds {
        return Err(CertifyError::NotCertified);
    }
    if !(tol > 0.0) || n_runs == 0 {
        return Err(CertifyError::Settings(format!("need n_runs >= 1 and tol > 0, got {n_runs} and {tol}")));
    }
    let predicted = cert.predicted_limits.clone().unwrap_or_default();
    let runs = ensemble(cascade, config, n_runs)?;
    let mut per_run = Vec::with_capacity(n_runs);
    let mut failed = Vec::new();
    for (i, tr) in runs.iter().enumerate() {
        let mut limits = Vec::with_capacity(tr.states.len());
        for s in &tr.states {
            match limit_value(s, tol, DEFAULT_TAIL_FRACTION)? {
                Some(v) => limits.push(v[0]),
                None => break,
            }
        }
        if limits.len() == tr.states.len() {
            per_run.push(Some(limits));
        } else {
            failed.push(i);
            per_run.push(None);
        }
    }
    let settled: Vec<&Vec<f64>> = per_run.iter().flatten().collect();
    let mut spread = 0.0f64;
    let mut err = 0.0f64;
    for j in 0..cascade.ode_stages().len() {
        let values = settled.iter().map(|l| l[j]);
        let (lo, hi) = values.clone().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        if !settled.is_empty() {
            spread = spread.max(hi - lo);
        }
        if let Some(p) = predicted.get(j) {
            err = values.fold(err, |e, v| e.max((v - p).abs()));
        }
    }
    let alarm = (!failed.is_empty()).then(|| {
        format!(
            "certified loop did not settle within tol {tol} in runs {failed:?}; check dt, horizon and the \
             stage models"
        )
    });
    Ok(ValidationReport {
        n_runs,
        tol,
        all_converged: failed.is_empty(),
        max_limit_spread: spread,
        max_prediction_error: err,
        per_run_limits: per_run,
        failed_runs: failed,
        alarm,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainCheckSettings {
    /// Admissible input range; generated inputs stay inside it.
    pub input_range: Interval,
    /// Oscillatory inputs for the amplitude inequality.
    pub n_cauchy: usize,
    /// Convergent input pairs for the incremental limit inequality.
    pub n_pairs: usize,
    #[serde(default = "default_tail")]
    pub tail_fraction: f64,
    /// `eps` for reading off limits.
    #[serde(default = "default_limit_tol")]
    pub tol: f64,
}

fn default_tail() -> f64 {
    DEFAULT_TAIL_FRACTION
}

fn default_limit_tol() -> f64 {
    1e-5
}

impl GainCheckSettings {
    pub fn new(input_range: Interval, n_cauchy: usize, n_pairs: usize) -> Self {
        Self { input_range, n_cauchy, n_pairs, tail_fraction: default_tail(), tol: default_limit_tol() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputKind {
    Oscillatory,
    ConvergentPair,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputId {
    pub kind: InputKind,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainCheckReport {
    /// `max(‖η‖aa − γ(‖ω‖aa))` over the oscillatory inputs.
    pub cauchy_max_violation: f64,
    /// `max(|η1∞ − η2∞| − γ(|ω1∞ − ω2∞|))` over the convergent pairs.
    pub incremental_max_violation: f64,
    pub max_violation: f64,
    pub worst_input_id: Option<InputId>,
    /// Pairs whose outputs did not settle within `tol`; counted as infinite
    /// violations.
    pub unsettled_pairs: Vec<usize>,
}

fn input_signal(
    config: &SimConfig,
    index: usize,
    range: Interval,
    f: impl Fn(f64) -> f64,
) -> Result<Signal, CertifyError> {
    let n = config.steps() + 1;
    let sig = Signal::scalar_from_fn(0.0, config.dt, n, f)?;
    if let Some(&value) = sig.values().iter().find(|&&v| !(range.lo..=range.hi).contains(&v)) {
        return Err(CertifyError::GeneratorEscape { index, value, lo: range.lo, hi: range.hi });
    }
    Ok(sig)
}

/// Tests a claimed gain of one stage on random inputs.
///
/// Oscillatory inputs are sums of three sinusoids around a random center,
/// confined to the input range; the tail amplitudes of input and state are
/// compared. Convergent pairs approach two random constants exponentially
/// (time constants in `[0.5, 3]`); the state limits are compared.
pub fn empirical_gain_check(
    stage: &ScalarMonotoneOde,
    claimed: &GainFunction,
    settings: &GainCheckSettings,
    config: SimConfig,
    seed: u64,
) -> Result<GainCheckReport, CertifyError> {
    claimed.validate()?;
    let range = settings.input_range;
    range.check()?;
    if range.lo < 0.0 {
        return Err(CertifyError::Settings(format!("input range must lie in [0, inf), got [{}, {}]", range.lo, range.hi)));
    }
    if settings.n_cauchy + settings.n_pairs == 0 {
        return Err(CertifyError::Settings("at least one input is required".into()));
    }
    config.validate()?;
    let cascade = CascadeSpec::new(vec![StageSpec::Ode(stage.clone())], None)?;
    let state = stage.interval();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: Option<(f64, InputId)> = None;
    let mut record = |v: f64, id: InputId| {
        if worst.is_none_or(|(w, _)| v > w) {
            worst = Some((v, id));
        }
    };

    let mut cauchy = f64::NEG_INFINITY;
    for index in 0..settings.n_cauchy {
        let center = rng.random_range(range.lo..=range.hi);
        let budget = (center - range.lo).min(range.hi - center);
        let weights: [f64; 3] = [rng.random(), rng.random(), rng.random()];
        let total: f64 = weights.iter().sum::<f64>().max(f64::MIN_POSITIVE);
        let comps: Vec<(f64, f64, f64)> = weights
            .iter()
            .map(|w| (budget * w / total, rng.random_range(0.2..5.0), rng.random_range(0.0..std::f64::consts::TAU)))
            .collect();
        let input = input_signal(&config, index, range, |t| {
            let v = center + comps.iter().map(|(a, f, p)| a * (f * t + p).sin()).sum::<f64>();
            v.clamp(range.lo, range.hi)
        })?;
        let x0 = rng.random_range(state.lo..=state.hi);
        let tr = simulate_open(&cascade, &input, &[History::constant(x0)], config)?;
        let amp_in = asymptotic_amplitude(&input, settings.tail_fraction)?;
        let amp_out = asymptotic_amplitude(&tr.states[0], settings.tail_fraction)?;
        let v = amp_out - claimed.eval(amp_in)?;
        cauchy = cauchy.max(v);
        record(v, InputId { kind: InputKind::Oscillatory, index });
    }

    let mut incremental = f64::NEG_INFINITY;
    let mut unsettled = Vec::new();
    for index in 0..settings.n_pairs {
        let mut limits = [0.0; 2];
        let mut targets = [0.0; 2];
        let mut settled = true;
        for slot in 0..2 {
            let target = rng.random_range(range.lo..=range.hi);
            let start = rng.random_range(range.lo..=range.hi);
            let decay = rng.random_range(0.5..3.0);
            let input = input_signal(&config, index, range, |t| {
                (target + (start - target) * (-t / decay).exp()).clamp(range.lo, range.hi)
            })?;
            let x0 = rng.random_range(state.lo..=state.hi);
            let tr = simulate_open(&cascade, &input, &[History::constant(x0)], config)?;
            targets[slot] = target;
            match limit_value(&tr.states[0], settings.tol, settings.tail_fraction)? {
                Some(l) => limits[slot] = l[0],
                None => settled = false,
            }
        }
        let v = if settled {
            (limits[0] - limits[1]).abs() - claimed.eval((targets[0] - targets[1]).abs())?
        } else {
            unsettled.push(index);
            f64::INFINITY
        };
        incremental = incremental.max(v);
        record(v, InputId { kind: InputKind::ConvergentPair, index });
    }

    let cauchy_max_violation = if settings.n_cauchy > 0 { cauchy } else { 0.0 };
    let incremental_max_violation = if settings.n_pairs > 0 { incremental } else { 0.0 };
    Ok(GainCheckReport {
        cauchy_max_violation,
        incremental_max_violation,
        max_violation: worst.map_or(0.0, |(v, _)| v),
        worst_input_id: worst.map(|(_, id)| id),
        unsettled_pairs: unsettled,
    })
}
