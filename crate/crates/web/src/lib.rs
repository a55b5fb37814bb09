//! Browser bindings for the enzyme-cascade demo page.
//!
//! Every export takes plain numbers and returns a JSON string; the page in
//! `www/` draws the results on canvases. The `*_json` functions are the
//! same operations without the wasm-bindgen wrapper, so they run natively
//! in tests.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use cauchygain::behaviors::{CascadeSpec, Feedback};
use cauchygain::certify::certify;
use cauchygain::decrease::GainMode;
use cauchygain::simulate::{constant_histories, simulate_closed, SimConfig};

/// Trajectories are thinned to at most this many samples before they are
/// sent to the page.
pub const MAX_PLOT_POINTS: usize = 2000;

fn mode(name: &str) -> Result<GainMode, String> {
    name.parse()
}

fn chain(n: usize, mu: f64, k: f64, tau: f64) -> Result<CascadeSpec, String> {
    if !(1..=8).contains(&n) {
        return Err(format!("number of stages must be between 1 and 8, got {n}"));
    }
    CascadeSpec::enzyme_chain(n, mu, k, tau).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct CertificateView {
    mode: String,
    holds: bool,
    loop_factor: f64,
    k_max: Option<f64>,
    lambdas: Vec<f64>,
    input_interval: [f64; 2],
    predicted_limits: Option<Vec<f64>>,
    witness: Option<f64>,
}

/// Certificate summary for `n` enzyme stages `ẋ = −x + u(1 − x)` linked by
/// delays `tau` and closed by `μ/(1 + k x_n)`.
pub fn certify_json(n: usize, mu: f64, k: f64, tau: f64, mode_name: &str) -> Result<String, String> {
    let cascade = chain(n, mu, k, tau)?;
    let cert = certify(&cascade, mode(mode_name)?, None).map_err(|e| e.to_string())?;
    let view = CertificateView {
        mode: cert.mode.to_string(),
        holds: cert.holds,
        loop_factor: cert.loop_factor,
        k_max: cert.k_max,
        lambdas: cert.per_stage.iter().filter(|r| r.kind == "ode").map(|r| r.lambda).collect(),
        input_interval: [cert.input_interval.lo, cert.input_interval.hi],
        predicted_limits: cert.predicted_limits,
        witness: cert.contraction.witness,
    };
    serde_json::to_string(&view).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct TrajectoryView {
    t: Vec<f64>,
    x: Vec<Vec<f64>>,
    omega: Vec<f64>,
    final_states: Vec<f64>,
}

/// Closed-loop trajectory from the constant history `x0` for every stage,
/// thinned to at most [`MAX_PLOT_POINTS`] samples.
pub fn simulate_json(n: usize, mu: f64, k: f64, tau: f64, x0: f64, horizon: f64, dt: f64) -> Result<String, String> {
    let cascade = chain(n, mu, k, tau)?;
    if !(0.0..=1.0).contains(&x0) {
        return Err(format!("initial value must lie in [0, 1], got {x0}"));
    }
    let config = SimConfig { dt, horizon, ..SimConfig::default() };
    let tr = simulate_closed(&cascade, &constant_histories(&vec![x0; n]), config).map_err(|e| e.to_string())?;
    let len = tr.effective_input.len();
    let stride = len.div_ceil(MAX_PLOT_POINTS).max(1);
    let mut idx: Vec<usize> = (0..len).step_by(stride).chain(std::iter::once(len - 1)).collect();
    idx.dedup();
    let view = TrajectoryView {
        t: idx.iter().map(|&i| tr.effective_input.time(i)).collect(),
        x: tr.states.iter().map(|s| idx.iter().map(|&i| s.sample(i)[0]).collect()).collect(),
        omega: idx.iter().map(|&i| tr.effective_input.sample(i)[0]).collect(),
        final_states: tr.final_states(),
    };
    serde_json::to_string(&view).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct SweepRow {
    k: f64,
    global_holds: bool,
    relative_holds: bool,
    global_loop_factor: f64,
    relative_loop_factor: f64,
}

/// Global and relative verdicts for `steps` evenly spaced feedback gains.
pub fn sweep_json(n: usize, mu: f64, tau: f64, k_from: f64, k_to: f64, steps: usize) -> Result<String, String> {
    if !(1..=200).contains(&steps) {
        return Err(format!("steps must be between 1 and 200, got {steps}"));
    }
    let base = chain(n, mu, k_from, tau)?;
    let mut rows = Vec::with_capacity(steps);
    for i in 0..steps {
        let k = if steps == 1 { k_from } else { k_from + (k_to - k_from) * i as f64 / (steps - 1) as f64 };
        let cascade = base.with_feedback(Some(Feedback { mu, k, tau_n: tau })).map_err(|e| e.to_string())?;
        let g = certify(&cascade, GainMode::Global, None).map_err(|e| e.to_string())?;
        let r = certify(&cascade, GainMode::Relative, None).map_err(|e| e.to_string())?;
        rows.push(SweepRow {
            k,
            global_holds: g.holds,
            relative_holds: r.holds,
            global_loop_factor: g.loop_factor,
            relative_loop_factor: r.loop_factor,
        });
    }
    serde_json::to_string(&rows).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn certify_chain(n: usize, mu: f64, k: f64, tau: f64, mode: &str) -> Result<String, JsError> {
    certify_json(n, mu, k, tau, mode).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn simulate_chain(n: usize, mu: f64, k: f64, tau: f64, x0: f64, horizon: f64, dt: f64) -> Result<String, JsError> {
    simulate_json(n, mu, k, tau, x0, horizon, dt).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn sweep_k(n: usize, mu: f64, tau: f64, k_from: f64, k_to: f64, steps: usize) -> Result<String, JsError> {
    sweep_json(n, mu, tau, k_from, k_to, steps).map_err(|e| JsError::new(&e))
}
