//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Tolerances are pinned below.

use std::process::{Command, ExitCode};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cauchygain::behaviors::{CascadeSpec, History, ScalarFn, ScalarMonotoneOde, StageSpec};
use cauchygain::certify::{certify, empirical_gain_check, validate_certificate, GainCheckSettings};
use cauchygain::decrease::{default_exclusion_eps, verify_u_decrease, DecreaseFunction, GainMode, VerifyGrid};
use cauchygain::gains::{compose, is_contraction, GainFunction, GridSpec};
use cauchygain::signals::{asymptotic_amplitude, converges_to, omega_limit_diameter, BoxSet, Interval, Signal};
use cauchygain::simulate::{constant_histories, simulate_closed, simulate_open, SimConfig};

const AMPLITUDE_REL_TOL: f64 = 0.01;
const DECAY_AMPLITUDE_TOL: f64 = 1e-3;
const OPEN_LOOP_TOL: f64 = 1e-5;
const GAIN_ORACLE_TOL: f64 = 1e-3;
const SPREAD_TOL: f64 = 2e-5;
const LIMIT_TOL: f64 = 1e-5;
const RELATIVE_LOOP_FACTOR_MAX: f64 = 0.05;
// oracle: 2·0.25·(g⁻¹)'(1.6)·(g⁻¹)'(g⁻¹(1.6)) with (g⁻¹)'(u) = 1/(1+u)²
const RELATIVE_LOOP_FACTOR_ORACLE: f64 = 0.028_344_671_201_814_053;
const RELATIVE_LOOP_FACTOR_TOL: f64 = 1e-4;
const CAUCHY_SLACK: f64 = 0.02;
const INCREMENTAL_SLACK: f64 = 2e-4;
const DT_HALVING_TOL: f64 = 1e-7;
const CLAMP_TOL: f64 = 1e-9;

type Outcome = Result<String, String>;

fn check(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn enzyme() -> ScalarMonotoneOde {
    ScalarMonotoneOde::new(
        ScalarFn::Affine { slope: 1.0, intercept: 0.0 },
        ScalarFn::Affine { slope: -1.0, intercept: 1.0 },
        Interval { lo: 0.0, hi: 1.0 },
    )
    .unwrap()
}

/// Root of `α(x) − u β(x)` on the stage interval by plain bisection.
fn equilibrium_oracle(stage: &ScalarMonotoneOde, u: f64) -> f64 {
    let Interval { lo: mut a, hi: mut b } = stage.interval();
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if stage.alpha().eval(m) - u * stage.beta().eval(m) < 0.0 {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

fn random_stage(rng: &mut ChaCha8Rng) -> ScalarMonotoneOde {
    let a = rng.random_range(-2.0..2.0);
    let b = a + rng.random_range(0.2..3.0);
    let alpha = if rng.random_bool(0.5) {
        let s = rng.random_range(0.2..5.0);
        ScalarFn::Affine { slope: s, intercept: -s * a }
    } else {
        ScalarFn::Hill {
            vmax: rng.random_range(0.5..5.0),
            half_sat: rng.random_range(0.1..2.0),
            exponent: rng.random_range(1.0..3.0),
            anchor: a,
        }
    };
    let beta = if rng.random_bool(0.5) {
        let s = rng.random_range(0.2..5.0);
        ScalarFn::Affine { slope: -s, intercept: s * b }
    } else {
        ScalarFn::RepressiveHill {
            vmax: rng.random_range(0.5..5.0),
            half_sat: rng.random_range(0.1..2.0),
            exponent: rng.random_range(1.0..3.0),
            anchor: b,
        }
    };
    ScalarMonotoneOde::new(alpha, beta, Interval { lo: a, hi: b }).expect("generated stage is valid")
}

/// Input that puts the equilibrium at a random interior point.
fn interior_input(rng: &mut ChaCha8Rng, stage: &ScalarMonotoneOde, from: f64, to: f64) -> f64 {
    let iv = stage.interval();
    let x = iv.lo + rng.random_range(from..to) * iv.width();
    stage.alpha().eval(x) / stage.beta().eval(x)
}

fn gain_algebra() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let grid = GridSpec::default();
    for i in 0..1000 {
        let (a, b) = match i % 4 {
            // exact boundary ab = 1
            0 => {
                let m = rng.random_range(-20i32..20);
                (2f64.powi(m), 2f64.powi(-m))
            }
            _ => (rng.random_range(0.0..10.0), rng.random_range(0.0..10.0)),
        };
        let (ga, gb) = (GainFunction::Linear(a), GainFunction::Linear(b));
        let c = compose(&ga, &gb);
        check(c == GainFunction::Linear(a * b), format!("compose({a}, {b}) = {c:?}"))?;
        let v = is_contraction(&ga, &gb, &grid, 1e-6).map_err(|e| e.to_string())?;
        check(v.holds == (a * b < 1.0), format!("contraction({a}, {b}) = {}", v.holds))?;
        if a * b == 1.0 {
            check(!v.holds && v.witness.is_some(), "boundary ab = 1 must fail with a witness")?;
        }
    }
    Ok("1000 random pairs, 250 on the boundary ab = 1".into())
}

fn amplitude_estimator() -> Outcome {
    let e = |e: cauchygain::signals::SignalError| e.to_string();
    let constant = Signal::scalar_from_fn(0.0, 0.01, 1000, |_| 3.7).map_err(e)?;
    check(asymptotic_amplitude(&constant, 0.5).map_err(e)? == 0.0, "constant signal amplitude is not 0")?;
    let horizon = 40.0 * std::f64::consts::PI;
    let n = (horizon / 0.01) as usize + 1;
    let mut worst = 0.0f64;
    for amp in [0.1, 1.0, 10.0] {
        let s = Signal::scalar_from_fn(0.0, 0.01, n, |t| amp * t.sin()).map_err(e)?;
        let a = asymptotic_amplitude(&s, 0.5).map_err(e)?;
        check(a == omega_limit_diameter(&s, 0.5).map_err(e)?, "amplitude and omega-limit diameter differ")?;
        let rel = (a - 2.0 * amp).abs() / (2.0 * amp);
        worst = worst.max(rel);
        check(rel <= AMPLITUDE_REL_TOL, format!("A = {amp}: amplitude {a}, relative error {rel}"))?;
    }
    let decay = Signal::scalar_from_fn(0.0, 0.01, 3001, |t| (-t).exp() + 0.3).map_err(e)?;
    let d = asymptotic_amplitude(&decay, 0.5).map_err(e)?;
    check(d < DECAY_AMPLITUDE_TOL, format!("e^-t + c amplitude {d}"))?;
    Ok(format!("sine relative error {worst:.2e}, decay amplitude {d:.2e}"))
}

fn decrease_verification() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_margin = f64::NEG_INFINITY;
    for i in 0..50 {
        let stage = random_stage(&mut rng);
        let mut c = interior_input(&mut rng, &stage, 0.05, 0.95);
        let mut d = interior_input(&mut rng, &stage, 0.05, 0.95);
        if c > d {
            std::mem::swap(&mut c, &mut d);
        }
        let u = Interval { lo: c, hi: d };
        let z = stage.g_and_inverse().map_err(|e| e.to_string())?.g_inv_interval(u);
        let r = verify_u_decrease(
            &DecreaseFunction::DistanceToInterval(z),
            &stage,
            u,
            default_exclusion_eps(&stage),
            VerifyGrid::default(),
        )
        .map_err(|e| e.to_string())?;
        let margin = r.margin_found.unwrap_or(f64::INFINITY);
        check(r.ok && margin < 0.0, format!("stage {i}: decrease check failed: {r:?}"))?;
        worst_margin = worst_margin.max(margin);
    }
    // target 0.9 while the equilibrium under u = 1 is 0.5
    let stage = enzyme();
    let r = verify_u_decrease(
        &DecreaseFunction::DistanceToInterval(Interval::point(0.9)),
        &stage,
        Interval::point(1.0),
        default_exclusion_eps(&stage),
        VerifyGrid::default(),
    )
    .map_err(|e| e.to_string())?;
    check(!r.ok && r.witness.is_some(), "mis-centered distance function passed")?;
    let w = r.witness.unwrap();
    Ok(format!("50 random stages, worst margin {worst_margin:.2e}; mis-centered witness x = {}", w.x))
}

fn open_loop_convergence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let config = SimConfig { dt: 0.01, horizon: 50.0, ..SimConfig::default() };
    let mut worst = 0.0f64;
    for i in 0..20 {
        let stage = random_stage(&mut rng);
        let c = interior_input(&mut rng, &stage, 0.2, 0.8);
        let iv = stage.interval();
        let x0 = rng.random_range(iv.lo..=iv.hi);
        let cascade = CascadeSpec::new(vec![StageSpec::Ode(stage.clone())], None).map_err(|e| e.to_string())?;
        let input = Signal::scalar(0.0, config.horizon, vec![c, c]).map_err(|e| e.to_string())?;
        let tr = simulate_open(&cascade, &input, &[History::constant(x0)], config).map_err(|e| e.to_string())?;
        let oracle = equilibrium_oracle(&stage, c);
        let x = &tr.states[0];
        // the final tenth of the run lies in the ball
        let inside = converges_to(x, &BoxSet::singleton(&[oracle]), OPEN_LOOP_TOL, 0.1).map_err(|e| e.to_string())?;
        let err = (x.last()[0] - oracle).abs();
        worst = worst.max(err);
        check(inside && err <= OPEN_LOOP_TOL, format!("pair {i}: final {} vs oracle {oracle}", x.last()[0]))?;
    }
    Ok(format!("20 random (stage, c) pairs, worst final error {worst:.2e}"))
}

fn flagship_loop() -> Outcome {
    let e = |e: cauchygain::certify::CertifyError| e.to_string();
    let cascade = CascadeSpec::enzyme_chain(2, 2.0, 0.25, 0.5).map_err(|e| e.to_string())?;
    let global = certify(&cascade, GainMode::Global, None).map_err(e)?;
    // derivative oracle: (g⁻¹)'(u) = 1/(1+u)², maximal at u = 0
    let oracle_lambda = 1.0;
    for row in global.per_stage.iter().filter(|r| r.kind == "ode") {
        check(
            (row.lambda - oracle_lambda).abs() <= GAIN_ORACLE_TOL,
            format!("stage {} λ = {}", row.index, row.lambda),
        )?;
    }
    let k_max = global.k_max.ok_or("no global k_max")?;
    check((k_max - 0.5).abs() <= GAIN_ORACLE_TOL, format!("global k_max {k_max}"))?;
    check(global.holds, "global certificate fails at k = 0.25")?;

    let config = SimConfig { dt: 0.01, horizon: 200.0, seed: 2024, ..SimConfig::default() };
    let report = validate_certificate(&global, &cascade, config, 10, LIMIT_TOL).map_err(e)?;
    check(report.all_converged, format!("runs {:?} did not converge", report.failed_runs))?;
    check(report.max_limit_spread < SPREAD_TOL, format!("spread {}", report.max_limit_spread))?;
    // fixed-point oracle: bisection on y = g⁻¹(g⁻¹(2 / (1 + y/4)))
    let ginv = |u: f64| u / (1.0 + u);
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let m = 0.5 * (lo + hi);
        if ginv(ginv(2.0 / (1.0 + 0.25 * m))) > m {
            lo = m;
        } else {
            hi = m;
        }
    }
    let y = 0.5 * (lo + hi);
    let oracle = [ginv(2.0 / (1.0 + 0.25 * y)), y];
    for (r, limits) in report.per_run_limits.iter().enumerate() {
        let limits = limits.as_ref().ok_or(format!("run {r} has no limit"))?;
        for (j, (l, o)) in limits.iter().zip(oracle).enumerate() {
            check((l - o).abs() <= LIMIT_TOL, format!("run {r} state {}: {l} vs oracle {o}", j + 1))?;
        }
    }

    let relative = certify(&cascade, GainMode::Relative, None).map_err(e)?;
    check(relative.loop_factor < RELATIVE_LOOP_FACTOR_MAX, format!("relative loop factor {}", relative.loop_factor))?;
    check(
        (relative.loop_factor - RELATIVE_LOOP_FACTOR_ORACLE).abs() <= RELATIVE_LOOP_FACTOR_TOL,
        format!("relative loop factor {} vs oracle {RELATIVE_LOOP_FACTOR_ORACLE}", relative.loop_factor),
    )?;
    let rel_k_max = relative.k_max.ok_or("no relative k_max")?;
    check(rel_k_max > k_max, format!("relative k_max {rel_k_max} not above global {k_max}"))?;
    let beyond = cascade.with_feedback(Some(cauchygain::behaviors::Feedback { mu: 2.0, k: 1.0, tau_n: 0.5 })).unwrap();
    check(
        certify(&beyond, GainMode::Relative, None).map_err(e)?.holds
            && !certify(&beyond, GainMode::Global, None).map_err(e)?.holds,
        "k = 1: expected relative to hold and global to fail",
    )?;
    Ok(format!(
        "k_max {k_max:.5} (global) / {rel_k_max:.5} (relative), spread {:.1e}, limit error {:.1e}, relative loop factor {:.5}",
        report.max_limit_spread, report.max_prediction_error, relative.loop_factor
    ))
}

fn empirical_gains() -> Outcome {
    let cascade = CascadeSpec::enzyme_chain(2, 2.0, 0.25, 0.5).map_err(|e| e.to_string())?;
    let cert = certify(&cascade, GainMode::Global, None).map_err(|e| e.to_string())?;
    let config = SimConfig { dt: 0.01, horizon: 100.0, ..SimConfig::default() };
    let mut summary = Vec::new();
    for (n, row) in cert.per_stage.iter().filter(|r| r.kind == "ode").enumerate() {
        let stage = cascade.ode_stages()[n].clone();
        let settings = GainCheckSettings::new(row.input_interval, 100, 50);
        let r = empirical_gain_check(&stage, &GainFunction::Linear(row.lambda), &settings, config, 60 + n as u64)
            .map_err(|e| e.to_string())?;
        check(
            r.cauchy_max_violation <= CAUCHY_SLACK,
            format!("stage {}: amplitude violation {}", n + 1, r.cauchy_max_violation),
        )?;
        check(
            r.incremental_max_violation <= INCREMENTAL_SLACK,
            format!("stage {}: incremental violation {}", n + 1, r.incremental_max_violation),
        )?;
        summary.push(format!(
            "stage {}: {:.2e} / {:.2e}",
            n + 1,
            r.cauchy_max_violation,
            r.incremental_max_violation
        ));
    }
    Ok(summary.join(", "))
}

fn numerics() -> Outcome {
    let cascade = CascadeSpec::enzyme_chain(2, 2.0, 0.25, 0.5).map_err(|e| e.to_string())?;
    let hist = constant_histories(&[0.2, 0.8]);
    let coarse = SimConfig { dt: 0.01, horizon: 200.0, clamp_tol: CLAMP_TOL, seed: 0 };
    let fine = SimConfig { dt: 0.005, ..coarse };
    let a = simulate_closed(&cascade, &hist, coarse).map_err(|e| e.to_string())?;
    let b = simulate_closed(&cascade, &hist, fine).map_err(|e| e.to_string())?;
    let mut diff = 0.0f64;
    for (x, y) in a.final_states().iter().zip(b.final_states()) {
        diff = diff.max((x - y).abs());
    }
    check(diff < DT_HALVING_TOL, format!("dt halving changes the state at t = 200 by {diff}"))?;
    for tr in [&a, &b] {
        check(tr.max_clamp_overshoot <= CLAMP_TOL, format!("clamp overshoot {}", tr.max_clamp_overshoot))?;
        check(
            tr.states.iter().all(|s| s.values().iter().all(|v| (0.0..=1.0).contains(v))),
            "state left [0, 1]",
        )?;
    }
    Ok(format!("max difference {diff:.2e}, overshoot {:.1e}", a.max_clamp_overshoot.max(b.max_clamp_overshoot)))
}

fn sweep_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = dir.path().join("flagship.toml");
    std::fs::write(&config, include_str!("../../../configs/flagship.toml")).map_err(|e| e.to_string())?;
    let mut tables = Vec::new();
    for i in 0..2 {
        let out = dir.path().join(format!("sweep_{i}.csv"));
        let status = Command::new(env!("CARGO_BIN_EXE_cauchygain"))
            .args(["sweep", "--param", "k", "--from", "0", "--to", "1", "--steps", "5", "--simulate", "--seed", "11"])
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .output()
            .map_err(|e| e.to_string())?;
        check(status.status.success(), format!("sweep exited with {:?}", status.status.code()))?;
        tables.push(std::fs::read(&out).map_err(|e| e.to_string())?);
    }
    let body = |t: &[u8]| -> Vec<u8> {
        let s = String::from_utf8_lossy(t);
        let mut lines = s.lines();
        let first = lines.next().unwrap_or_default().to_string();
        assert!(first.starts_with("# generated_at"), "first line is not the timestamp: {first}");
        lines.collect::<Vec<_>>().join("\n").into_bytes()
    };
    check(body(&tables[0]) == body(&tables[1]), "sweep tables differ")?;
    Ok(format!("{} identical bytes after the timestamp line", body(&tables[0]).len()))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("gain algebra exactness", gain_algebra),
        ("amplitude estimator", amplitude_estimator),
        ("decrease verification", decrease_verification),
        ("open-loop convergence to the equilibrium set", open_loop_convergence),
        ("flagship closed loop certificate and validation", flagship_loop),
        ("empirical gain inequalities", empirical_gains),
        ("numerics sanity", numerics),
        ("sweep determinism", sweep_determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {}: PASS  {name} ({detail}) [{secs:.1}s]", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {}: FAIL  {name}: {why} [{secs:.1}s]", i + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criterion/criteria failed");
        ExitCode::FAILURE
    }
}
