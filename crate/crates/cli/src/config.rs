//! Run configuration: a strict TOML document describing the cascade, the
//! feedback, simulation settings and check thresholds.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;
use sha2::{Digest, Sha256};

use cauchygain::behaviors::{CascadeSpec, Feedback, MemorylessMap, ScalarFn, ScalarMonotoneOde, StageSpec};
use cauchygain::certify::GainCheckSettings;
use cauchygain::signals::{Interval, Signal};
use cauchygain::simulate::SimConfig;

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StageConfig {
    Ode { interval: [f64; 2], alpha: ScalarFn, beta: ScalarFn },
    Delay { tau: f64 },
    Memoryless { map: MemorylessMap },
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InputConfig {
    Constant { value: f64 },
    /// `offset + amplitude · sin(omega t + phase)`
    Sinusoid {
        offset: f64,
        amplitude: f64,
        omega: f64,
        #[serde(default)]
        phase: f64,
    },
}

impl InputConfig {
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            InputConfig::Constant { value } => value,
            InputConfig::Sinusoid { offset, amplitude, omega, phase } => offset + amplitude * (omega * t + phase).sin(),
        }
    }

    /// Samples on the simulation grid over `[0, horizon]`.
    pub fn signal(&self, sim: &SimConfig) -> Result<Signal> {
        Ok(Signal::scalar_from_fn(0.0, sim.dt, sim.steps() + 1, |t| self.eval(t))?)
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationConfig {
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

fn default_runs() -> usize {
    10
}

fn default_tol() -> f64 {
    1e-5
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self { runs: default_runs(), tol: default_tol() }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub stages: Vec<StageConfig>,
    pub feedback: Option<Feedback>,
    #[serde(default)]
    pub sim: SimSection,
    pub input: Option<InputConfig>,
    #[serde(default)]
    pub validation: ValidationConfig,
    pub gain_check: Option<GainCheckSettings>,
}

/// `[sim]` without the seed, which lives at the top level.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_clamp_tol")]
    pub clamp_tol: f64,
}

fn default_dt() -> f64 {
    SimConfig::default().dt
}

fn default_horizon() -> f64 {
    SimConfig::default().horizon
}

fn default_clamp_tol() -> f64 {
    SimConfig::default().clamp_tol
}

impl Default for SimSection {
    fn default() -> Self {
        Self { dt: default_dt(), horizon: default_horizon(), clamp_tol: default_clamp_tol() }
    }
}

/// A parsed config together with the digest of the text it came from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub run: RunConfig,
    pub cascade: CascadeSpec,
    pub digest: String,
}

impl LoadedConfig {
    pub fn sim(&self) -> SimConfig {
        let s = self.run.sim;
        SimConfig { dt: s.dt, horizon: s.horizon, clamp_tol: s.clamp_tol, seed: self.run.seed }
    }

    /// The cascade with its feedback block replaced.
    pub fn with_feedback(&self, fb: Option<Feedback>) -> Result<CascadeSpec> {
        Ok(self.cascade.with_feedback(fb)?)
    }

    pub fn require_feedback(&self) -> Result<Feedback> {
        self.cascade.feedback().copied().context("config has no [feedback] section")
    }

    /// 1-based index among the ODE stages.
    pub fn ode_stage(&self, index: usize) -> Result<&ScalarMonotoneOde> {
        let odes = self.cascade.ode_stages();
        if index == 0 || index > odes.len() {
            bail!("--stage {index} is out of range: the cascade has {} ode stage(s), numbered from 1", odes.len());
        }
        Ok(odes[index - 1])
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Parses `text`; `seed_override` replaces the top-level seed and is
/// folded into the digest.
pub fn parse(text: &str, seed_override: Option<u64>) -> Result<LoadedConfig> {
    let mut run: RunConfig = toml::from_str(text).map_err(|e| anyhow::anyhow!("invalid config: {e}"))?;
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    if let Some(seed) = seed_override {
        run.seed = seed;
        hasher.update(format!("\nseed override = {seed}\n").as_bytes());
    }
    let digest = hex(&hasher.finalize());
    let cascade = build_cascade(&run)?;
    let loaded = LoadedConfig { run, cascade, digest };
    loaded.sim().validate().context("invalid [sim] section")?;
    let v = loaded.run.validation;
    if v.runs == 0 || !(v.tol > 0.0) {
        bail!("invalid [validation] section: need runs >= 1 and tol > 0, got runs = {}, tol = {}", v.runs, v.tol);
    }
    Ok(loaded)
}

pub fn load(path: &Path, seed_override: Option<u64>) -> Result<LoadedConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    parse(&text, seed_override).with_context(|| format!("in {}", path.display()))
}

fn build_cascade(run: &RunConfig) -> Result<CascadeSpec> {
    let mut stages = Vec::with_capacity(run.stages.len());
    for (i, s) in run.stages.iter().enumerate() {
        let n = i + 1;
        let stage = match s {
            StageConfig::Ode { interval, alpha, beta } => {
                let iv = Interval::new(interval[0], interval[1]).with_context(|| format!("stage {n}: interval"))?;
                StageSpec::Ode(
                    ScalarMonotoneOde::new(alpha.clone(), beta.clone(), iv).with_context(|| format!("stage {n}"))?,
                )
            }
            StageConfig::Delay { tau } => StageSpec::Delay(*tau),
            StageConfig::Memoryless { map } => {
                map.validate().with_context(|| format!("stage {n}"))?;
                StageSpec::Memoryless(map.clone())
            }
        };
        stages.push(stage);
    }
    Ok(CascadeSpec::new(stages, run.feedback)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    const FLAGSHIP: &str = r#"
seed = 7

[[stages]]
kind = "ode"
interval = [0.0, 1.0]
alpha = { affine = { slope = 1.0, intercept = 0.0 } }
beta = { affine = { slope = -1.0, intercept = 1.0 } }

[[stages]]
kind = "delay"
tau = 0.5

[[stages]]
kind = "ode"
interval = [0.0, 1.0]
alpha = { affine = { slope = 1.0, intercept = 0.0 } }
beta = { affine = { slope = -1.0, intercept = 1.0 } }

[feedback]
mu = 2.0
k = 0.25
tau_n = 0.5
"#;

    #[test]
    fn flagship_parses_to_the_enzyme_chain() {
        let c = parse(FLAGSHIP, None).unwrap();
        assert_eq!(c.cascade, CascadeSpec::enzyme_chain(2, 2.0, 0.25, 0.5).unwrap());
        assert_eq!(c.sim(), SimConfig { seed: 7, ..SimConfig::default() });
        assert_eq!(c.digest.len(), 64);
        let overridden = parse(FLAGSHIP, Some(9)).unwrap();
        assert_eq!(overridden.sim().seed, 9);
        assert_ne!(overridden.digest, c.digest);
    }

    #[test]
    fn unknown_keys_are_named() {
        let text = FLAGSHIP.replace("tau_n = 0.5", "tau_n = 0.5\ngain = 1.0");
        let err = format!("{:#}", parse(&text, None).unwrap_err());
        assert!(err.contains("gain"), "{err}");
        let text = FLAGSHIP.replace("tau = 0.5", "tua = 0.5");
        let err = format!("{:#}", parse(&text, None).unwrap_err());
        assert!(err.contains("tua"), "{err}");
    }

    #[test]
    fn invalid_stage_names_its_index() {
        let text = FLAGSHIP.replacen("intercept = 0.0", "intercept = 0.5", 1);
        let err = format!("{:#}", parse(&text, None).unwrap_err());
        assert!(err.contains("stage 1"), "{err}");
    }

    #[test]
    fn sinusoid_input() {
        let text = format!("{FLAGSHIP}\n[input]\nkind = \"sinusoid\"\noffset = 1.0\namplitude = 0.5\nomega = 2.0\n");
        let c = parse(&text, None).unwrap();
        let input = c.run.input.unwrap();
        assert_eq!(input.eval(0.0), 1.0);
        assert_eq!(input.signal(&c.sim()).unwrap().len(), 20_001);
    }
}
