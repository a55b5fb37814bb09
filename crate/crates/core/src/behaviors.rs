//! Building blocks of a cascade: pure delays, memoryless maps, and scalar
//! monotone ODE stages `ẋ = −α(x) + u·β(x)` on `[a, b]`.
//!
//! Each ODE stage has an input-dependent equilibrium `x̄(u) = g⁻¹(u)` with
//! `g = α/β`. The Lipschitz constant of `g⁻¹` on an input interval is the
//! stage's gain on that interval.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signals::{Interval, Signal, SignalError};

/// Absolute tolerance of the `g⁻¹` bisection.
pub const G_INV_TOL: f64 = 1e-12;
/// Round-trip tolerance `|g⁻¹(g(x)) − x|` checked when a stage is inverted.
pub const ROUNDTRIP_TOL: f64 = 1e-10;
/// Grid size used for monotonicity and round-trip verification.
pub const VERIFY_GRID: usize = 1001;
/// Default grid for Lipschitz estimates.
pub const DEFAULT_LIPSCHITZ_GRID: usize = 10_001;
/// Iteration cap of the root finder behind `g⁻¹`.
const MAX_ROOT_ITERATIONS: usize = 400;

const ENDPOINT_ZERO_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BehaviorError {
    #[error("invalid function definition: {0}")]
    InvalidFunction(String),
    #[error("invalid stage: {0}")]
    InvalidStage(String),
    #[error("invalid cascade: {0}")]
    InvalidCascade(String),
    #[error("input {x} outside the domain of {map}")]
    InputDomain { map: String, x: f64 },
    #[error("history required for delay {tau} > 0")]
    MissingHistory { tau: f64 },
    #[error("history does not cover [{needed_from}, {needed_to}]")]
    HistoryCoverage { needed_from: f64, needed_to: f64 },
    #[error("function undefined (non-finite) at x = {x}")]
    Undefined { x: f64 },
    #[error("lipschitz estimate needs n_grid >= 2 and a nondegenerate interval, got n_grid={n_grid} on [{lo}, {hi}]")]
    LipschitzGrid { n_grid: usize, lo: f64, hi: f64 },
    #[error(transparent)]
    Signal(#[from] SignalError),
}

/// A closed-form or tabulated scalar function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ScalarFn {
    Affine { slope: f64, intercept: f64 },
    /// `vmax · s^n / (K^n + s^n)` with `s = max(x − anchor, 0)`; increasing.
    Hill { vmax: f64, half_sat: f64, exponent: f64, anchor: f64 },
    /// `vmax · s^n / (K^n + s^n)` with `s = max(anchor − x, 0)`; decreasing.
    RepressiveHill { vmax: f64, half_sat: f64, exponent: f64, anchor: f64 },
    /// Linear interpolation through `(x, y)` points sorted by `x`; the end
    /// segments are extended.
    Table(Vec<(f64, f64)>),
}

impl ScalarFn {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            ScalarFn::Affine { slope, intercept } => slope * x + intercept,
            ScalarFn::Hill { vmax, half_sat, exponent, anchor } => hill(*vmax, *half_sat, *exponent, (x - anchor).max(0.0)),
            ScalarFn::RepressiveHill { vmax, half_sat, exponent, anchor } => {
                hill(*vmax, *half_sat, *exponent, (anchor - x).max(0.0))
            }
            ScalarFn::Table(points) => interpolate_table(points, x),
        }
    }

    pub fn validate(&self) -> Result<(), BehaviorError> {
        let finite = |vals: &[f64]| vals.iter().all(|v| v.is_finite());
        match self {
            ScalarFn::Affine { slope, intercept } => {
                if !finite(&[*slope, *intercept]) {
                    return Err(BehaviorError::InvalidFunction("affine coefficients must be finite".into()));
                }
            }
            ScalarFn::Hill { vmax, half_sat, exponent, anchor }
            | ScalarFn::RepressiveHill { vmax, half_sat, exponent, anchor } => {
                if !finite(&[*vmax, *half_sat, *exponent, *anchor]) || *vmax <= 0.0 || *half_sat <= 0.0 || *exponent <= 0.0 {
                    return Err(BehaviorError::InvalidFunction(
                        "hill form needs finite vmax > 0, half_sat > 0, exponent > 0".into(),
                    ));
                }
            }
            ScalarFn::Table(points) => validate_table(points)?,
        }
        Ok(())
    }
}

fn hill(vmax: f64, half_sat: f64, exponent: f64, s: f64) -> f64 {
    let sn = s.powf(exponent);
    vmax * sn / (half_sat.powf(exponent) + sn)
}

fn validate_table(points: &[(f64, f64)]) -> Result<(), BehaviorError> {
    if points.len() < 2 {
        return Err(BehaviorError::InvalidFunction("table needs at least two points".into()));
    }
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(BehaviorError::InvalidFunction("table entries must be finite".into()));
    }
    if points.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(BehaviorError::InvalidFunction("table x values must be strictly increasing".into()));
    }
    Ok(())
}

fn interpolate_table(points: &[(f64, f64)], x: f64) -> f64 {
    let n = points.len();
    let seg = match points.iter().position(|&(px, _)| x <= px) {
        Some(0) => 0,
        Some(i) => i - 1,
        None => n - 2,
    };
    let (x0, y0) = points[seg];
    let (x1, y1) = points[seg + 1];
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

fn strict_monotone(points: &[(f64, f64)]) -> Option<bool> {
    if points.windows(2).all(|w| w[1].1 > w[0].1) {
        Some(true)
    } else if points.windows(2).all(|w| w[1].1 < w[0].1) {
        Some(false)
    } else {
        None
    }
}

/// Static pointwise nonlinearity `η(t) = ψ(ω(t))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum MemorylessMap {
    Identity,
    Scale(f64),
    /// `μ / (1 + k x)` on `x >= 0`.
    Inhibition { mu: f64, k: f64 },
    /// Strictly monotone table; defined only on the tabulated range.
    TableLookup(Vec<(f64, f64)>),
}

impl MemorylessMap {
    pub fn validate(&self) -> Result<(), BehaviorError> {
        match self {
            MemorylessMap::Identity => Ok(()),
            MemorylessMap::Scale(l) if l.is_finite() => Ok(()),
            MemorylessMap::Scale(l) => Err(BehaviorError::InvalidFunction(format!("scale {l} must be finite"))),
            MemorylessMap::Inhibition { mu, k } => {
                if mu.is_finite() && *mu > 0.0 && k.is_finite() && *k >= 0.0 {
                    Ok(())
                } else {
                    Err(BehaviorError::InvalidFunction(format!("inhibition needs mu > 0 and k >= 0, got mu={mu}, k={k}")))
                }
            }
            MemorylessMap::TableLookup(points) => {
                validate_table(points)?;
                strict_monotone(points)
                    .map(|_| ())
                    .ok_or_else(|| BehaviorError::InvalidFunction("lookup table must be strictly monotone".into()))
            }
        }
    }

    pub fn eval(&self, x: f64) -> Result<f64, BehaviorError> {
        match self {
            MemorylessMap::Identity => Ok(x),
            MemorylessMap::Scale(l) => Ok(l * x),
            MemorylessMap::Inhibition { mu, k } => {
                if x < 0.0 {
                    return Err(BehaviorError::InputDomain { map: self.label(), x });
                }
                Ok(mu / (1.0 + k * x))
            }
            MemorylessMap::TableLookup(points) => {
                let (lo, hi) = (points[0].0, points[points.len() - 1].0);
                if x < lo || x > hi {
                    return Err(BehaviorError::InputDomain { map: self.label(), x });
                }
                Ok(interpolate_table(points, x))
            }
        }
    }

    pub fn is_decreasing(&self) -> bool {
        match self {
            MemorylessMap::Identity => false,
            MemorylessMap::Scale(l) => *l < 0.0,
            MemorylessMap::Inhibition { k, .. } => *k > 0.0,
            MemorylessMap::TableLookup(points) => strict_monotone(points) == Some(false),
        }
    }

    /// Image of an interval; endpoints swap for decreasing maps.
    pub fn map_interval(&self, iv: Interval) -> Result<Interval, BehaviorError> {
        let a = self.eval(iv.lo)?;
        let b = self.eval(iv.hi)?;
        Ok(Interval { lo: a.min(b), hi: a.max(b) })
    }

    /// Lipschitz constant on `iv` (exact for every variant).
    pub fn lipschitz_on(&self, iv: Interval) -> Result<f64, BehaviorError> {
        match self {
            MemorylessMap::Identity => Ok(1.0),
            MemorylessMap::Scale(l) => Ok(l.abs()),
            MemorylessMap::Inhibition { mu, k } => {
                if iv.lo < 0.0 {
                    return Err(BehaviorError::InputDomain { map: self.label(), x: iv.lo });
                }
                Ok(k * mu / (1.0 + k * iv.lo).powi(2))
            }
            MemorylessMap::TableLookup(points) => {
                self.eval(iv.lo)?;
                self.eval(iv.hi)?;
                Ok(points
                    .windows(2)
                    .filter(|w| w[1].0 >= iv.lo && w[0].0 <= iv.hi)
                    .map(|w| ((w[1].1 - w[0].1) / (w[1].0 - w[0].0)).abs())
                    .fold(0.0, f64::max))
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            MemorylessMap::Identity => "identity".into(),
            MemorylessMap::Scale(l) => format!("scale({l})"),
            MemorylessMap::Inhibition { mu, k } => format!("inhibition(mu={mu}, k={k})"),
            MemorylessMap::TableLookup(_) => "table_lookup".into(),
        }
    }
}

/// Scalar stage `ẋ = −α(x) + u β(x)` on `[a, b]` with `α(a) = β(b) = 0`,
/// `α` strictly increasing and `β` strictly decreasing. The interval is
/// invariant for every input `u >= 0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalarMonotoneOde {
    alpha: ScalarFn,
    beta: ScalarFn,
    interval: Interval,
}

impl ScalarMonotoneOde {
    pub fn new(alpha: ScalarFn, beta: ScalarFn, interval: Interval) -> Result<Self, BehaviorError> {
        alpha.validate()?;
        beta.validate()?;
        let (a, b) = (interval.lo, interval.hi);
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(BehaviorError::InvalidStage(format!("state interval [{a}, {b}] needs a < b")));
        }
        let scale = 1.0 + a.abs().max(b.abs());
        if alpha.eval(a).abs() > ENDPOINT_ZERO_TOL * scale {
            return Err(BehaviorError::InvalidStage(format!("alpha(a) = {} must be 0", alpha.eval(a))));
        }
        if beta.eval(b).abs() > ENDPOINT_ZERO_TOL * scale {
            return Err(BehaviorError::InvalidStage(format!("beta(b) = {} must be 0", beta.eval(b))));
        }
        let grid = interval.grid(VERIFY_GRID);
        for w in grid.windows(2) {
            if alpha.eval(w[1]) <= alpha.eval(w[0]) {
                return Err(BehaviorError::InvalidStage(format!("alpha not strictly increasing near x = {}", w[0])));
            }
            if beta.eval(w[1]) >= beta.eval(w[0]) {
                return Err(BehaviorError::InvalidStage(format!("beta not strictly decreasing near x = {}", w[0])));
            }
        }
        Ok(Self { alpha, beta, interval })
    }

    pub fn alpha(&self) -> &ScalarFn {
        &self.alpha
    }

    pub fn beta(&self) -> &ScalarFn {
        &self.beta
    }

    pub fn interval(&self) -> Interval {
        self.interval
    }

    /// `f(x, u) = −α(x) + u β(x)`.
    pub fn rhs(&self, x: f64, u: f64) -> f64 {
        -self.alpha.eval(x) + u * self.beta.eval(x)
    }

    /// `g = α/β` and its bisection inverse, after verifying monotonicity of
    /// `g` and the round trip `g⁻¹(g(x)) = x` on a grid.
    pub fn g_and_inverse(&self) -> Result<GMap<'_>, BehaviorError> {
        let map = GMap { stage: self };
        let Interval { lo: a, hi: b } = self.interval;
        // b itself is excluded: g(b) = +inf
        let step = (b - a) / VERIFY_GRID as f64;
        let mut prev = f64::NEG_INFINITY;
        for i in 0..VERIFY_GRID {
            let x = a + step * i as f64;
            let gx = map.g(x);
            if !(gx > prev) || !gx.is_finite() {
                return Err(BehaviorError::InvalidStage(format!("g = alpha/beta not strictly increasing at x = {x}")));
            }
            prev = gx;
            let back = map.g_inv(gx);
            if (back - x).abs() > ROUNDTRIP_TOL {
                return Err(BehaviorError::InvalidStage(format!(
                    "g_inv(g({x})) = {back} misses by {:e}",
                    (back - x).abs()
                )));
            }
        }
        Ok(map)
    }
}

/// `g(x) = α(x)/β(x)` on `[a, b)` and its inverse on `[0, ∞)`.
#[derive(Debug, Clone, Copy)]
pub struct GMap<'a> {
    stage: &'a ScalarMonotoneOde,
}

impl GMap<'_> {
    pub fn g(&self, x: f64) -> f64 {
        let beta = self.stage.beta.eval(x);
        if beta <= 0.0 {
            return f64::INFINITY;
        }
        self.stage.alpha.eval(x) / beta
    }

    /// The equilibrium of the stage under constant input `u`: the root of
    /// `α(x) − u β(x)` on `[a, b]`, by bracketed regula falsi (Illinois
    /// variant). Inputs `u <= 0` map to `a`.
    pub fn g_inv(&self, u: f64) -> f64 {
        let Interval { lo: a, hi: b } = self.stage.interval;
        let terms = |x: f64| (self.stage.alpha.eval(x), u * self.stage.beta.eval(x));
        let residual = |x: f64| {
            let (p, q) = terms(x);
            p - q
        };
        let (fa, fb) = (residual(a), residual(b));
        if u <= 0.0 || fa >= 0.0 {
            return a;
        }
        if fb <= 0.0 {
            return b;
        }
        // stop at (nearly) full precision at the interval's scale, well inside G_INV_TOL
        let floor = 2.0 * f64::EPSILON * a.abs().max(b.abs()).max(b - a);
        let (mut lo, mut flo, mut hi, mut fhi) = (a, fa, b, fb);
        let mut last_side = 0i8;
        let mut prev = f64::NAN;
        for _ in 0..MAX_ROOT_ITERATIONS {
            if hi - lo <= floor {
                break;
            }
            let mut x = hi - fhi * (hi - lo) / (fhi - flo);
            if !(x > lo && x < hi) {
                x = 0.5 * (lo + hi);
            }
            if (x - prev).abs() <= floor {
                return x;
            }
            prev = x;
            let (p, q) = terms(x);
            let fx = p - q;
            // zero up to the roundoff of the subtraction
            if fx.abs() <= 4.0 * f64::EPSILON * (p.abs() + q.abs()) {
                return x;
            }
            if fx < 0.0 {
                (lo, flo) = (x, fx);
                if last_side < 0 {
                    fhi *= 0.5;
                }
                last_side = -1;
            } else {
                (hi, fhi) = (x, fx);
                if last_side > 0 {
                    flo *= 0.5;
                }
                last_side = 1;
            }
        }
        0.5 * (lo + hi)
    }

    pub fn g_inv_interval(&self, u: Interval) -> Interval {
        Interval { lo: self.g_inv(u.lo), hi: self.g_inv(u.hi) }
    }
}

/// Largest absolute difference quotient between adjacent points of a
/// uniform `n_grid`-point grid. This is a lower bound on the true Lipschitz
/// constant that tightens as the grid is refined.
pub fn lipschitz_estimate(f: impl Fn(f64) -> f64, interval: Interval, n_grid: usize) -> Result<f64, BehaviorError> {
    if n_grid < 2 || !(interval.width() > 0.0) {
        return Err(BehaviorError::LipschitzGrid { n_grid, lo: interval.lo, hi: interval.hi });
    }
    let grid = interval.grid(n_grid);
    let mut prev_x = grid[0];
    let mut prev_y = f(prev_x);
    if !prev_y.is_finite() {
        return Err(BehaviorError::Undefined { x: prev_x });
    }
    let mut best = 0.0f64;
    for &x in &grid[1..] {
        let y = f(x);
        if !y.is_finite() {
            return Err(BehaviorError::Undefined { x });
        }
        best = best.max(((y - prev_y) / (x - prev_x)).abs());
        prev_x = x;
        prev_y = y;
    }
    Ok(best)
}

/// Like [`lipschitz_estimate`], but each cell's difference quotient is
/// raised by the larger change to its neighbours' quotients. For a `C²`
/// function this bounds the derivative inside the cell up to higher-order
/// terms, so the result over-approximates the Lipschitz constant instead of
/// under-approximating it.
pub fn lipschitz_upper_estimate(
    f: impl Fn(f64) -> f64,
    interval: Interval,
    n_grid: usize,
) -> Result<f64, BehaviorError> {
    if n_grid < 2 || !(interval.width() > 0.0) {
        return Err(BehaviorError::LipschitzGrid { n_grid, lo: interval.lo, hi: interval.hi });
    }
    let grid = interval.grid(n_grid);
    let mut values = Vec::with_capacity(grid.len());
    for &x in &grid {
        let y = f(x);
        if !y.is_finite() {
            return Err(BehaviorError::Undefined { x });
        }
        values.push(y);
    }
    let q: Vec<f64> = (1..grid.len()).map(|i| (values[i] - values[i - 1]) / (grid[i] - grid[i - 1])).collect();
    let mut best = 0.0f64;
    for i in 0..q.len() {
        let left = if i > 0 { (q[i] - q[i - 1]).abs() } else { 0.0 };
        let right = if i + 1 < q.len() { (q[i + 1] - q[i]).abs() } else { 0.0 };
        best = best.max(q[i].abs() + left.max(right));
    }
    Ok(best)
}

/// Pre-start data for a delayed signal on `[t0 − τ, t0]`.
#[derive(Debug, Clone, PartialEq)]
pub enum History {
    Constant(Vec<f64>),
    /// Sampled history; must cover the needed window.
    Sampled(Signal),
}

impl History {
    pub fn constant(x: f64) -> Self {
        History::Constant(vec![x])
    }

    pub fn dim(&self) -> usize {
        match self {
            History::Constant(v) => v.len(),
            History::Sampled(s) => s.dim(),
        }
    }

    pub fn value_at(&self, t: f64, j: usize) -> Option<f64> {
        match self {
            History::Constant(v) => v.get(j).copied(),
            History::Sampled(s) => s.value_at(t, j),
        }
    }

    pub fn covers(&self, from: f64, to: f64) -> bool {
        match self {
            History::Constant(_) => true,
            History::Sampled(s) => {
                let end = s.time(s.len() - 1);
                s.t0() <= from + 1e-9 && end >= to - 1e-9
            }
        }
    }
}

/// `η(t) = ω(t − τ)` on the input's time grid; samples before `t0 + τ` come
/// from `history`. Grid-aligned delays shift samples exactly, otherwise
/// the input is linearly interpolated.
pub fn apply_delay(sig: &Signal, tau: f64, history: Option<&History>) -> Result<Signal, BehaviorError> {
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(BehaviorError::InvalidStage(format!("delay {tau} must be finite and >= 0")));
    }
    if tau == 0.0 {
        return Ok(sig.clone());
    }
    let history = history.ok_or(BehaviorError::MissingHistory { tau })?;
    let t0 = sig.t0();
    if history.dim() != sig.dim() || !history.covers(t0 - tau, t0) {
        return Err(BehaviorError::HistoryCoverage { needed_from: t0 - tau, needed_to: t0 });
    }
    let shift = tau / sig.dt();
    let aligned = (shift - shift.round()).abs() < 1e-9;
    let dim = sig.dim();
    let mut data = Vec::with_capacity(sig.values().len());
    for i in 0..sig.len() {
        let t = sig.time(i);
        let q = t - tau;
        for j in 0..dim {
            let v = if aligned && i >= shift.round() as usize {
                sig.sample(i - shift.round() as usize)[j]
            } else if q >= t0 && !aligned {
                sig.value_at(q, j).ok_or(BehaviorError::Undefined { x: q })?
            } else {
                history.value_at(q, j).ok_or(BehaviorError::HistoryCoverage { needed_from: q, needed_to: t0 })?
            };
            data.push(v);
        }
    }
    Ok(Signal::new(t0, sig.dt(), dim, data)?)
}

/// Pointwise `ψ` on every component.
pub fn apply_memoryless(sig: &Signal, psi: &MemorylessMap) -> Result<Signal, BehaviorError> {
    if matches!(psi, MemorylessMap::Identity) {
        return Ok(sig.clone());
    }
    let data = sig.values().iter().map(|&x| psi.eval(x)).collect::<Result<Vec<_>, _>>()?;
    Ok(Signal::new(sig.t0(), sig.dt(), sig.dim(), data)?)
}

#[derive(Debug, Clone, PartialEq)]
pub enum StageSpec {
    Delay(f64),
    Memoryless(MemorylessMap),
    Ode(ScalarMonotoneOde),
}

impl StageSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            StageSpec::Delay(_) => "delay",
            StageSpec::Memoryless(_) => "memoryless",
            StageSpec::Ode(_) => "ode",
        }
    }
}

/// Inhibitory closure `u_1(t) = μ / (1 + k y(t − τ_n))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Feedback {
    pub mu: f64,
    pub k: f64,
    pub tau_n: f64,
}

impl Feedback {
    pub fn psi(&self) -> MemorylessMap {
        MemorylessMap::Inhibition { mu: self.mu, k: self.k }
    }

    /// Lipschitz constant `kμ` of `ψ` on `[0, ∞)`.
    pub fn lipschitz(&self) -> f64 {
        self.k * self.mu
    }
}

/// Ordered stages, optionally closed by inhibitory feedback from the final
/// output to the first stage's input.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeSpec {
    stages: Vec<StageSpec>,
    feedback: Option<Feedback>,
}

impl CascadeSpec {
    pub fn new(stages: Vec<StageSpec>, feedback: Option<Feedback>) -> Result<Self, BehaviorError> {
        if !stages.iter().any(|s| matches!(s, StageSpec::Ode(_))) {
            return Err(BehaviorError::InvalidCascade("at least one ode stage is required".into()));
        }
        for (i, s) in stages.iter().enumerate() {
            match s {
                StageSpec::Delay(tau) if !(tau.is_finite() && *tau >= 0.0) => {
                    return Err(BehaviorError::InvalidCascade(format!("stage {i}: delay {tau} must be >= 0")));
                }
                StageSpec::Memoryless(m) => {
                    m.validate().map_err(|e| BehaviorError::InvalidCascade(format!("stage {i}: {e}")))?
                }
                _ => {}
            }
        }
        if let Some(fb) = &feedback {
            fb.psi()
                .validate()
                .map_err(|e| BehaviorError::InvalidCascade(format!("feedback: {e}")))?;
            if !(fb.tau_n.is_finite() && fb.tau_n >= 0.0) {
                return Err(BehaviorError::InvalidCascade(format!("feedback delay {} must be >= 0", fb.tau_n)));
            }
        }
        Ok(Self { stages, feedback })
    }

    /// `n` identical `α(x) = x, β(x) = 1 − x` stages on `[0, 1]` separated by
    /// delays `tau`, with feedback `μ/(1 + k x_n(t − tau))`.
    pub fn enzyme_chain(n: usize, mu: f64, k: f64, tau: f64) -> Result<Self, BehaviorError> {
        let stage = ScalarMonotoneOde::new(
            ScalarFn::Affine { slope: 1.0, intercept: 0.0 },
            ScalarFn::Affine { slope: -1.0, intercept: 1.0 },
            Interval { lo: 0.0, hi: 1.0 },
        )?;
        let mut stages = Vec::new();
        for i in 0..n {
            if i > 0 {
                stages.push(StageSpec::Delay(tau));
            }
            stages.push(StageSpec::Ode(stage.clone()));
        }
        Self::new(stages, Some(Feedback { mu, k, tau_n: tau }))
    }

    pub fn stages(&self) -> &[StageSpec] {
        &self.stages
    }

    pub fn feedback(&self) -> Option<&Feedback> {
        self.feedback.as_ref()
    }

    pub fn with_feedback(&self, feedback: Option<Feedback>) -> Result<Self, BehaviorError> {
        Self::new(self.stages.clone(), feedback)
    }

    pub fn ode_stages(&self) -> Vec<&ScalarMonotoneOde> {
        self.stages
            .iter()
            .filter_map(|s| match s {
                StageSpec::Ode(o) => Some(o),
                _ => None,
            })
            .collect()
    }

    pub fn last_ode(&self) -> &ScalarMonotoneOde {
        self.ode_stages().last().copied().expect("cascade has an ode stage")
    }
}
