//! Subcommand implementations. Each returns the process exit code on
//! success; errors map to [`EXIT_ERROR`](crate::EXIT_ERROR) in `main`.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use serde::Serialize;

use cauchygain::behaviors::{CascadeSpec, Feedback};
use cauchygain::certify::{certify, validate_certificate, Certificate, ValidationReport};
use cauchygain::decrease::{default_exclusion_eps, stage_gain, verify_u_decrease, DecreaseFunction, GainMode, VerifyGrid};
use cauchygain::signals::{asymptotic_amplitude, fmt_full, limit_value, Interval, DEFAULT_TAIL_FRACTION};
use cauchygain::simulate::{ensemble, ensemble_histories, simulate_open, SimConfig, Trajectory};

use crate::config::{load, LoadedConfig};

/// `print!` that reports write errors instead of panicking and treats a
/// closed pipe (`cauchygain gain … | head`) as success.
macro_rules! out {
    ($($arg:tt)*) => { emit(format_args!($($arg)*))? };
}

macro_rules! outln {
    ($($arg:tt)*) => { emit(format_args!("{}\n", format_args!($($arg)*)))? };
}

fn emit(args: std::fmt::Arguments) -> std::io::Result<()> {
    match std::io::stdout().lock().write_fmt(args) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        other => other,
    }
}
use crate::{CertifyArgs, Cli, Command, SimulateArgs, StageArgs, SweepArgs, SweepParam, EXIT_CHECK_FAILED, OUT_DIR_ENV};

pub fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Certify(args) => cmd_certify(&args, cli.seed),
        Command::Simulate(args) => cmd_simulate(&args, cli.seed),
        Command::Sweep(args) => cmd_sweep(&args, cli.seed),
        Command::CheckDecrease(args) => cmd_check_decrease(&args, cli.seed),
        Command::Gain(args) => cmd_gain(&args, cli.seed),
    }
}

/// `--out`, else `output_dir` from the config, else the environment
/// variable, else the working directory.
fn output_dir(flag: Option<&Path>, config: &LoadedConfig) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(p) = &config.run.output_dir {
        return p.clone();
    }
    std::env::var_os(OUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."))
}

/// Writes through a temporary file in the target directory and renames it
/// into place, so a failed run never leaves a partial file behind.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("cannot write in {}", dir.display()))?;
    tmp.write_all(contents)?;
    tmp.persist(path).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

#[derive(Serialize)]
struct CertificateDocument<'a> {
    certificate: &'a Certificate,
    #[serde(skip_serializing_if = "Option::is_none")]
    validation: Option<&'a ValidationReport>,
}

fn cmd_certify(args: &CertifyArgs, seed: Option<u64>) -> Result<u8> {
    let config = load(&args.config, seed)?;
    config.require_feedback()?;
    let cert = certify(&config.cascade, args.mode.into(), Some(config.digest.clone()))?;
    let validation = if args.validate && cert.holds {
        let v = config.run.validation;
        Some(validate_certificate(&cert, &config.cascade, config.sim(), v.runs, v.tol)?)
    } else {
        None
    };
    let out = match &args.out {
        Some(p) => p.clone(),
        None => output_dir(None, &config).join("certificate.json"),
    };
    let doc = CertificateDocument { certificate: &cert, validation: validation.as_ref() };
    let mut json = serde_json::to_string_pretty(&doc)?;
    json.push('\n');
    write_atomic(&out, json.as_bytes())?;

    outln!("mode: {}", cert.mode);
    outln!("loop factor: {}", cert.loop_factor);
    match cert.k_max {
        Some(k) => outln!("k_max: {k}"),
        None => outln!("k_max: none"),
    }
    outln!("holds: {}", cert.holds);
    if let Some(r) = cert.contraction.witness {
        outln!("witness r: {r}");
    }
    if let Some(v) = &validation {
        outln!(
            "validation: all_converged = {}, max_limit_spread = {:e}, max_prediction_error = {:e}",
            v.all_converged, v.max_limit_spread, v.max_prediction_error
        );
        if let Some(alarm) = &v.alarm {
            eprintln!("warning: {alarm}");
        }
    }
    outln!("wrote {}", out.display());
    let validated = validation.as_ref().is_none_or(|v| v.passed());
    Ok(if cert.holds && validated { 0 } else { EXIT_CHECK_FAILED })
}

fn run_limits(tr: &Trajectory, tol: f64) -> Result<Vec<Option<f64>>> {
    tr.states
        .iter()
        .map(|s| Ok(limit_value(s, tol, DEFAULT_TAIL_FRACTION)?.map(|v| v[0])))
        .collect()
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "none".to_string(), fmt_full)
}

fn cmd_simulate(args: &SimulateArgs, seed: Option<u64>) -> Result<u8> {
    let config = load(&args.config, seed)?;
    if args.runs == 0 {
        bail!("--runs must be >= 1");
    }
    let sim = config.sim();
    let runs = if args.open {
        let input = config.run.input.context("--open needs an [input] section")?;
        let cascade = config.with_feedback(None)?;
        let signal = input.signal(&sim)?;
        ensemble_histories(&cascade, sim.seed, args.runs)
            .iter()
            .map(|h| simulate_open(&cascade, &signal, h, sim))
            .collect::<Result<Vec<_>, _>>()?
    } else {
        config.require_feedback()?;
        ensemble(&config.cascade, sim, args.runs)?
    };

    let n = config.cascade.ode_stages().len();
    let tol = config.run.validation.tol;
    let mut summary = String::from("run");
    for i in 1..=n {
        let _ = write!(summary, ",x{i}_limit");
    }
    for i in 1..=n {
        let _ = write!(summary, ",x{i}_amplitude");
    }
    summary.push('\n');
    let mut limits = Vec::with_capacity(runs.len());
    let mut amplitudes = vec![0.0f64; n];
    for (r, tr) in runs.iter().enumerate() {
        let lim = run_limits(tr, tol)?;
        let _ = write!(summary, "{r}");
        for v in &lim {
            let _ = write!(summary, ",{}", cell(*v));
        }
        for (i, s) in tr.states.iter().enumerate() {
            let a = asymptotic_amplitude(s, DEFAULT_TAIL_FRACTION)?;
            amplitudes[i] = amplitudes[i].max(a);
            let _ = write!(summary, ",{}", fmt_full(a));
        }
        summary.push('\n');
        limits.push(lim);
    }
    let spreads: Vec<Option<f64>> = (0..n)
        .map(|i| {
            let vals: Option<Vec<f64>> = limits.iter().map(|l| l[i]).collect();
            vals.map(|v| {
                let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
                hi - lo
            })
        })
        .collect();
    summary.push_str("spread");
    for s in &spreads {
        let _ = write!(summary, ",{}", cell(*s));
    }
    for a in &amplitudes {
        let _ = write!(summary, ",{}", fmt_full(*a));
    }
    summary.push('\n');

    let dir = output_dir(args.out.as_deref(), &config);
    for (r, tr) in runs.iter().enumerate() {
        write_atomic(&dir.join(format!("run_{r:03}.csv")), tr.to_csv().as_bytes())?;
    }
    write_atomic(&dir.join("summary.csv"), summary.as_bytes())?;

    let unsettled = limits.iter().filter(|l| l.iter().any(Option::is_none)).count();
    if unsettled > 0 {
        eprintln!(
            "warning: {unsettled} of {} run(s) did not settle within tol {tol} over the second half of the horizon; \
             limits reported as none",
            runs.len()
        );
    }
    out!("{summary}");
    outln!("wrote {} run file(s) and summary.csv to {}", runs.len(), dir.display());
    Ok(0)
}

/// `steps` evenly spaced values from `from` to `to`, both included.
pub fn linspace(from: f64, to: f64, steps: usize) -> Vec<f64> {
    match steps {
        0 => Vec::new(),
        1 => vec![from],
        _ => (0..steps).map(|i| from + (to - from) * i as f64 / (steps - 1) as f64).collect(),
    }
}

fn sweep_feedback(base: Feedback, param: SweepParam, v: f64) -> Feedback {
    match param {
        SweepParam::K => Feedback { k: v, ..base },
        SweepParam::Mu => Feedback { mu: v, ..base },
        SweepParam::TauN => Feedback { tau_n: v, ..base },
    }
}

fn simulated_spread(cascade: &CascadeSpec, sim: SimConfig, runs: usize, tol: f64) -> Result<Option<f64>> {
    let trs = ensemble(cascade, sim, runs)?;
    let mut spread = 0.0f64;
    let mut all: Vec<Vec<f64>> = Vec::with_capacity(trs.len());
    for tr in &trs {
        match run_limits(tr, tol)?.into_iter().collect::<Option<Vec<f64>>>() {
            Some(l) => all.push(l),
            None => return Ok(None),
        }
    }
    for i in 0..cascade.ode_stages().len() {
        let (lo, hi) = all.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), l| (a.min(l[i]), b.max(l[i])));
        spread = spread.max(hi - lo);
    }
    Ok(Some(spread))
}

/// The sweep table. The first line carries the generation time; everything
/// after it depends only on the config and seed.
pub fn sweep_table(config: &LoadedConfig, args: &SweepArgs) -> Result<String> {
    if args.steps == 0 {
        bail!("--steps must be >= 1");
    }
    let base = config.require_feedback()?;
    let name = match args.param {
        SweepParam::K => "k",
        SweepParam::Mu => "mu",
        SweepParam::TauN => "tau_n",
    };
    let stamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let mut out = format!("# generated_at_unix={stamp}\n# config_digest={}\n", config.digest);
    let _ = writeln!(
        out,
        "{name},global_holds,relative_holds,global_loop_factor,relative_loop_factor,global_k_max,relative_k_max,sim_spread"
    );
    let v = config.run.validation;
    for value in linspace(args.from, args.to, args.steps) {
        let cascade = config.with_feedback(Some(sweep_feedback(base, args.param, value)))
            .with_context(|| format!("{name} = {value}"))?;
        let g = certify(&cascade, GainMode::Global, None).with_context(|| format!("{name} = {value}"))?;
        let r = certify(&cascade, GainMode::Relative, None).with_context(|| format!("{name} = {value}"))?;
        let spread = if args.simulate {
            cell(simulated_spread(&cascade, config.sim(), v.runs, v.tol)?)
        } else {
            String::new()
        };
        let _ = writeln!(
            out,
            "{value},{},{},{},{},{},{},{spread}",
            g.holds,
            r.holds,
            fmt_full(g.loop_factor),
            fmt_full(r.loop_factor),
            cell(g.k_max),
            cell(r.k_max),
        );
    }
    Ok(out)
}

fn cmd_sweep(args: &SweepArgs, seed: Option<u64>) -> Result<u8> {
    let config = load(&args.config, seed)?;
    let table = sweep_table(&config, args)?;
    let out = match &args.out {
        Some(p) => p.clone(),
        None => output_dir(None, &config).join("sweep.csv"),
    };
    write_atomic(&out, table.as_bytes())?;
    out!("{table}");
    outln!("wrote {}", out.display());
    Ok(0)
}

fn input_interval(args: &StageArgs) -> Result<Interval> {
    let [c, d] = args.input_interval[..] else {
        bail!("--input-interval needs two values");
    };
    Interval::new(c, d).context("--input-interval")
}

#[derive(Serialize)]
struct GainDocument {
    stage: usize,
    input_interval: Interval,
    lambda: f64,
    z_set: Interval,
}

fn cmd_gain(args: &StageArgs, seed: Option<u64>) -> Result<u8> {
    let config = load(&args.config, seed)?;
    let stage = config.ode_stage(args.stage)?;
    let g = stage_gain(stage, input_interval(args)?)?;
    let doc = GainDocument { stage: args.stage, input_interval: g.input, lambda: g.lambda, z_set: g.z_set };
    outln!("{}", serde_json::to_string_pretty(&doc)?);
    Ok(0)
}

fn cmd_check_decrease(args: &StageArgs, seed: Option<u64>) -> Result<u8> {
    let config = load(&args.config, seed)?;
    let stage = config.ode_stage(args.stage)?;
    let u = input_interval(args)?;
    let target = match &args.target {
        Some(t) => Interval::new(t[0], t[1]).context("--target")?,
        None => stage.g_and_inverse()?.g_inv_interval(u),
    };
    let report = verify_u_decrease(
        &DecreaseFunction::DistanceToInterval(target),
        stage,
        u,
        default_exclusion_eps(stage),
        VerifyGrid::default(),
    )?;
    outln!("{}", serde_json::to_string_pretty(&report)?);
    Ok(if report.ok { 0 } else { EXIT_CHECK_FAILED })
}
