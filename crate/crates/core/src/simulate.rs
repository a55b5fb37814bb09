//! Fixed-step integration of open and closed cascades.
//!
//! Delay-differential cascades are integrated by the method of steps with
//! classical RK4. Delayed terms are read from the already computed part of
//! the trajectory (linear interpolation) or from the pre-start history.
//! When a delay is shorter than the step and the lookup lands inside the
//! current step, the value at the step start is used. Zero delays couple
//! the stages directly through the RK4 stage values.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::behaviors::{BehaviorError, CascadeSpec, History, MemorylessMap, ScalarMonotoneOde, StageSpec};
use crate::signals::{fmt_full, Interval, Signal, SignalError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("invalid history: {0}")]
    History(String),
    #[error("input signal does not cover [0, {horizon}]")]
    InputCoverage { horizon: f64 },
    #[error("stage {stage} left [{lo}, {hi}] at t = {time}: x = {value}")]
    InvarianceViolation { stage: usize, time: f64, value: f64, lo: f64, hi: f64 },
    #[error(transparent)]
    Behavior(#[from] BehaviorError),
    #[error(transparent)]
    Signal(#[from] SignalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub dt: f64,
    pub horizon: f64,
    #[serde(default = "default_clamp_tol")]
    pub clamp_tol: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_clamp_tol() -> f64 {
    1e-9
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { dt: 0.01, horizon: 200.0, clamp_tol: default_clamp_tol(), seed: 0 }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SimError::Config(format!("dt must be > 0, got {}", self.dt)));
        }
        if !(self.horizon.is_finite() && self.horizon >= 10.0 * self.dt) {
            return Err(SimError::Config(format!("horizon {} must be >= 10 dt", self.horizon)));
        }
        if !(self.clamp_tol > 0.0) {
            return Err(SimError::Config(format!("clamp_tol must be > 0, got {}", self.clamp_tol)));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }
}

/// Pre-start data for each ODE stage state, in cascade order. The value at
/// `t = 0` is the initial state.
pub type HistoryFunction = Vec<History>;

pub fn constant_histories(values: &[f64]) -> HistoryFunction {
    values.iter().map(|&v| History::constant(v)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// One scalar signal per ODE stage.
    pub states: Vec<Signal>,
    /// The input actually fed to the first ODE stage.
    pub effective_input: Signal,
    pub config: SimConfig,
    /// Largest distance any step landed outside its state interval before
    /// clamping.
    pub max_clamp_overshoot: f64,
}

impl Trajectory {
    /// `t,x1,…,xn,omega` with the config echoed as `#` comments first.
    pub fn to_csv(&self) -> String {
        let c = &self.config;
        let mut out = format!(
            "# dt={}\n# horizon={}\n# clamp_tol={}\n# seed={}\nt",
            c.dt, c.horizon, c.clamp_tol, c.seed
        );
        for i in 1..=self.states.len() {
            let _ = write!(out, ",x{i}");
        }
        out.push_str(",omega\n");
        for j in 0..self.effective_input.len() {
            out.push_str(&fmt_full(self.effective_input.time(j)));
            for s in &self.states {
                let _ = write!(out, ",{}", fmt_full(s.sample(j)[0]));
            }
            let _ = writeln!(out, ",{}", fmt_full(self.effective_input.sample(j)[0]));
        }
        out
    }

    pub fn final_states(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.last()[0]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Source {
    External,
    State(usize),
}

#[derive(Debug, Clone)]
struct InputPath {
    source: Source,
    delay: f64,
    maps: Vec<MemorylessMap>,
}

/// ODE stages with the (delay, maps) path feeding each of them.
fn compile(cascade: &CascadeSpec, closed: bool) -> (Vec<ScalarMonotoneOde>, Vec<InputPath>) {
    let mut odes = Vec::new();
    let mut paths = Vec::new();
    let mut source = Source::External;
    let mut delay = 0.0;
    let mut maps = Vec::new();
    for stage in cascade.stages() {
        match stage {
            StageSpec::Delay(tau) => delay += tau,
            StageSpec::Memoryless(m) => maps.push(m.clone()),
            StageSpec::Ode(ode) => {
                paths.push(InputPath { source, delay, maps: std::mem::take(&mut maps) });
                delay = 0.0;
                odes.push(ode.clone());
                source = Source::State(odes.len() - 1);
            }
        }
    }
    if let (true, Some(fb)) = (closed, cascade.feedback()) {
        // trailing stages, then ψ after τ_n, then the stages before the first ODE
        let first = &mut paths[0];
        let mut loop_maps = maps;
        loop_maps.push(fb.psi());
        loop_maps.append(&mut first.maps);
        *first = InputPath { source, delay: delay + fb.tau_n + first.delay, maps: loop_maps };
    }
    (odes, paths)
}

struct Integrator<'a> {
    odes: &'a [ScalarMonotoneOde],
    paths: &'a [InputPath],
    histories: &'a [History],
    input: Option<&'a Signal>,
    dt: f64,
    stored: Vec<Vec<f64>>,
}

impl Integrator<'_> {
    fn delayed_state(&self, i: usize, q: f64, step: usize) -> Result<f64, SimError> {
        if q <= 0.0 {
            return self.histories[i]
                .value_at(q, 0)
                .ok_or_else(|| SimError::History(format!("history of stage {} does not cover t = {q}", i + 1)));
        }
        let xs = &self.stored[i];
        let mut pos = q / self.dt;
        if (pos - pos.round()).abs() < 1e-9 {
            pos = pos.round();
        }
        let k = pos.floor() as usize;
        if k >= step {
            return Ok(xs[step]);
        }
        let w = pos - k as f64;
        Ok(xs[k] + (xs[k + 1] - xs[k]) * w)
    }

    fn input(&self, i: usize, s: f64, stage_vals: &[f64], step: usize) -> Result<f64, SimError> {
        let path = &self.paths[i];
        let q = s - path.delay;
        let mut v = match path.source {
            Source::External => {
                let sig = self.input.expect("open loop has an input");
                if q <= sig.t0() {
                    sig.sample(0)[0]
                } else {
                    sig.value_at(q, 0).ok_or(SimError::InputCoverage { horizon: q })?
                }
            }
            Source::State(j) if path.delay == 0.0 => stage_vals[j],
            Source::State(j) => self.delayed_state(j, q, step)?,
        };
        for m in &path.maps {
            v = m.eval(v)?;
        }
        Ok(v)
    }

    fn derivatives(&self, s: f64, y: &[f64], step: usize, out: &mut [f64]) -> Result<(), SimError> {
        let clamped: Vec<f64> = y
            .iter()
            .zip(self.odes)
            .map(|(&v, ode)| v.clamp(ode.interval().lo, ode.interval().hi))
            .collect();
        for (i, ode) in self.odes.iter().enumerate() {
            let u = self.input(i, s, &clamped, step)?;
            out[i] = ode.rhs(clamped[i], u);
        }
        Ok(())
    }
}

fn check_histories(odes: &[ScalarMonotoneOde], paths: &[InputPath], histories: &[History], tol: f64) -> Result<(), SimError> {
    if histories.len() != odes.len() {
        return Err(SimError::History(format!("{} histories for {} ode stages", histories.len(), odes.len())));
    }
    for (i, (h, ode)) in histories.iter().zip(odes).enumerate() {
        if h.dim() != 1 {
            return Err(SimError::History(format!("history of stage {} must be scalar", i + 1)));
        }
        let needed = paths
            .iter()
            .filter(|p| p.source == Source::State(i))
            .map(|p| p.delay)
            .fold(0.0, f64::max);
        if !h.covers(-needed, 0.0) {
            return Err(SimError::History(format!("history of stage {} must cover [{}, 0]", i + 1, -needed)));
        }
        let iv = ode.interval();
        let inside = |v: f64| v >= iv.lo - tol && v <= iv.hi + tol;
        let ok = match h {
            History::Constant(v) => inside(v[0]),
            History::Sampled(s) => s.values().iter().all(|&v| inside(v)),
        };
        if !ok {
            return Err(SimError::History(format!("history of stage {} leaves [{}, {}]", i + 1, iv.lo, iv.hi)));
        }
    }
    Ok(())
}

fn integrate(
    odes: &[ScalarMonotoneOde],
    paths: &[InputPath],
    histories: &[History],
    input: Option<&Signal>,
    config: SimConfig,
) -> Result<Trajectory, SimError> {
    config.validate()?;
    check_histories(odes, paths, histories, config.clamp_tol)?;
    let n = odes.len();
    let steps = config.steps();
    let dt = config.dt;
    let mut it = Integrator { odes, paths, histories, input, dt, stored: vec![Vec::with_capacity(steps + 1); n] };
    let mut x: Vec<f64> = histories
        .iter()
        .zip(odes)
        .map(|(h, ode)| {
            let iv = ode.interval();
            h.value_at(0.0, 0).unwrap_or(iv.lo).clamp(iv.lo, iv.hi)
        })
        .collect();
    for (i, v) in x.iter().enumerate() {
        it.stored[i].push(*v);
    }
    let mut omega = Vec::with_capacity(steps + 1);
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut y = vec![0.0; n];
    let mut max_overshoot = 0.0f64;

    for j in 0..steps {
        let t = dt * j as f64;
        let clamped: Vec<f64> = x.clone();
        omega.push(it.input(0, t, &clamped, j)?);

        it.derivatives(t, &x, j, &mut k1)?;
        for i in 0..n {
            y[i] = x[i] + 0.5 * dt * k1[i];
        }
        it.derivatives(t + 0.5 * dt, &y, j, &mut k2)?;
        for i in 0..n {
            y[i] = x[i] + 0.5 * dt * k2[i];
        }
        it.derivatives(t + 0.5 * dt, &y, j, &mut k3)?;
        for i in 0..n {
            y[i] = x[i] + dt * k3[i];
        }
        it.derivatives(t + dt, &y, j, &mut k4)?;

        let t_next = dt * (j + 1) as f64;
        for i in 0..n {
            let next = x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            let Interval { lo, hi } = odes[i].interval();
            let overshoot = (lo - next).max(next - hi).max(0.0);
            if overshoot > config.clamp_tol || !next.is_finite() {
                return Err(SimError::InvarianceViolation { stage: i + 1, time: t_next, value: next, lo, hi });
            }
            max_overshoot = max_overshoot.max(overshoot);
            x[i] = next.clamp(lo, hi);
            it.stored[i].push(x[i]);
        }
    }
    omega.push(it.input(0, dt * steps as f64, &x, steps)?);

    let states = it
        .stored
        .into_iter()
        .map(|v| Signal::scalar(0.0, dt, v))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Trajectory { states, effective_input: Signal::scalar(0.0, dt, omega)?, config, max_clamp_overshoot: max_overshoot })
}

/// Integrates the cascade driven by an external scalar input. The input is
/// held at its first sample before its start time and must reach the horizon.
pub fn simulate_open(
    cascade: &CascadeSpec,
    input: &Signal,
    histories: &[History],
    config: SimConfig,
) -> Result<Trajectory, SimError> {
    if cascade.feedback().is_some() {
        return Err(SimError::Config("open-loop simulation needs a cascade without feedback".into()));
    }
    if input.dim() != 1 {
        return Err(SimError::Config("external input must be scalar".into()));
    }
    let end = input.time(input.len() - 1);
    if end < config.horizon - 1e-9 {
        return Err(SimError::InputCoverage { horizon: config.horizon });
    }
    let (odes, paths) = compile(cascade, false);
    integrate(&odes, &paths, histories, Some(input), config)
}

/// Integrates the closed loop in which the first ODE stage is driven by
/// `μ / (1 + k y(t − τ_n))`, `y` being the cascade output.
pub fn simulate_closed(cascade: &CascadeSpec, histories: &[History], config: SimConfig) -> Result<Trajectory, SimError> {
    if cascade.feedback().is_none() {
        return Err(SimError::Config("closed-loop simulation needs a feedback block".into()));
    }
    let (odes, paths) = compile(cascade, true);
    integrate(&odes, &paths, histories, None, config)
}

/// Constant histories drawn uniformly from each stage interval, `n_runs`
/// sets in order, from a generator seeded with `seed`.
pub fn ensemble_histories(cascade: &CascadeSpec, seed: u64, n_runs: usize) -> Vec<HistoryFunction> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let odes = cascade.ode_stages();
    (0..n_runs)
        .map(|_| {
            odes.iter()
                .map(|ode| {
                    let iv = ode.interval();
                    History::constant(rng.random_range(iv.lo..=iv.hi))
                })
                .collect()
        })
        .collect()
}

/// `n_runs` closed-loop simulations from seeded random constant histories.
/// Results are ordered by run index.
pub fn ensemble(cascade: &CascadeSpec, config: SimConfig, n_runs: usize) -> Result<Vec<Trajectory>, SimError> {
    if n_runs == 0 {
        return Err(SimError::Config("n_runs must be >= 1".into()));
    }
    let histories = ensemble_histories(cascade, config.seed, n_runs);
    run_all(&histories, |h| simulate_closed(cascade, h, config))
}

#[cfg(feature = "parallel")]
fn run_all<F>(histories: &[HistoryFunction], f: F) -> Result<Vec<Trajectory>, SimError>
where
    F: Fn(&HistoryFunction) -> Result<Trajectory, SimError> + Sync + Send,
{
    use rayon::prelude::*;
    histories.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn run_all<F>(histories: &[HistoryFunction], f: F) -> Result<Vec<Trajectory>, SimError>
where
    F: Fn(&HistoryFunction) -> Result<Trajectory, SimError>,
{
    histories.iter().map(f).collect()
}
