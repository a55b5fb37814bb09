//! Uniformly sampled trajectories and the tail estimators used to measure
//! asymptotic amplitude, omega-limit diameter and limits.
//!
//! Every estimator works on the final `tail_fraction` of the samples, which
//! stands in for "large t". Estimates are only meaningful when the horizon
//! covers the transient.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Upper bound on points used for pairwise vector diameters.
pub const MAX_PAIRWISE_POINTS: usize = 4096;

pub const DEFAULT_TAIL_FRACTION: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SignalError {
    #[error("invalid signal: {0}")]
    Invalid(String),
    #[error("tail of {available} samples is too short (need at least 2)")]
    InsufficientData { available: usize },
    #[error("tail fraction {0} outside (0, 1]")]
    TailFraction(f64),
    #[error("dimension mismatch: signal has {signal}, set has {set}")]
    DimensionMismatch { signal: usize, set: usize },
}

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl From<[f64; 2]> for Interval {
    fn from([lo, hi]: [f64; 2]) -> Self {
        Interval { lo, hi }
    }
}

impl From<Interval> for [f64; 2] {
    fn from(iv: Interval) -> Self {
        [iv.lo, iv.hi]
    }
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self, SignalError> {
        let iv = Interval { lo, hi };
        iv.check()?;
        Ok(iv)
    }

    pub fn point(x: f64) -> Self {
        Interval { lo: x, hi: x }
    }

    pub fn check(&self) -> Result<(), SignalError> {
        if self.lo.is_nan() || self.hi.is_nan() || self.lo > self.hi {
            return Err(SignalError::Invalid(format!("interval [{}, {}] has lo > hi", self.lo, self.hi)));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn contains_interval(&self, other: &Interval) -> bool {
        self.lo <= other.lo && other.hi <= self.hi
    }

    pub fn distance(&self, x: f64) -> f64 {
        if x < self.lo {
            self.lo - x
        } else if x > self.hi {
            x - self.hi
        } else {
            0.0
        }
    }

    /// `n` evenly spaced points covering the interval (one point if degenerate).
    pub fn grid(&self, n: usize) -> Vec<f64> {
        if n <= 1 || self.width() == 0.0 {
            return vec![self.lo];
        }
        let step = self.width() / (n - 1) as f64;
        (0..n)
            .map(|i| if i == n - 1 { self.hi } else { self.lo + step * i as f64 })
            .collect()
    }
}

/// Product of closed intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSet {
    pub sides: Vec<Interval>,
}

impl BoxSet {
    pub fn new(sides: Vec<Interval>) -> Result<Self, SignalError> {
        for s in &sides {
            s.check()?;
        }
        Ok(Self { sides })
    }

    pub fn singleton(point: &[f64]) -> Self {
        Self { sides: point.iter().map(|&x| Interval::point(x)).collect() }
    }

    pub fn dim(&self) -> usize {
        self.sides.len()
    }

    /// Euclidean distance from `x` to the box.
    pub fn distance(&self, x: &[f64]) -> f64 {
        self.sides
            .iter()
            .zip(x)
            .map(|(s, &v)| s.distance(v).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// Euclidean diameter of a box: the norm of its side widths.
pub fn diameter(set: &BoxSet) -> f64 {
    set.sides.iter().map(|s| s.width().powi(2)).sum::<f64>().sqrt()
}

/// A uniformly sampled trajectory `t ↦ ω(t) ∈ R^m`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    t0: f64,
    dt: f64,
    dim: usize,
    data: Vec<f64>,
}

impl Signal {
    pub fn new(t0: f64, dt: f64, dim: usize, data: Vec<f64>) -> Result<Self, SignalError> {
        if !(dt > 0.0 && dt.is_finite()) || !t0.is_finite() {
            return Err(SignalError::Invalid(format!("need finite t0 and dt > 0, got t0={t0}, dt={dt}")));
        }
        if dim == 0 {
            return Err(SignalError::Invalid("dimension must be >= 1".into()));
        }
        if data.is_empty() || data.len() % dim != 0 {
            return Err(SignalError::Invalid(format!(
                "{} values do not form a nonempty set of {dim}-vectors",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(SignalError::Invalid(format!("non-finite sample at sample {}", i / dim)));
        }
        Ok(Self { t0, dt, dim, data })
    }

    pub fn scalar(t0: f64, dt: f64, values: Vec<f64>) -> Result<Self, SignalError> {
        Self::new(t0, dt, 1, values)
    }

    /// Samples `f` on `t0, t0 + dt, …` for `n` points.
    pub fn from_fn(t0: f64, dt: f64, n: usize, dim: usize, f: impl Fn(f64) -> Vec<f64>) -> Result<Self, SignalError> {
        let mut data = Vec::with_capacity(n * dim);
        for i in 0..n {
            let v = f(t0 + dt * i as f64);
            if v.len() != dim {
                return Err(SignalError::Invalid(format!("sample {i} has dimension {}, expected {dim}", v.len())));
            }
            data.extend(v);
        }
        Self::new(t0, dt, dim, data)
    }

    pub fn scalar_from_fn(t0: f64, dt: f64, n: usize, f: impl Fn(f64) -> f64) -> Result<Self, SignalError> {
        Self::scalar(t0, dt, (0..n).map(|i| f(t0 + dt * i as f64)).collect())
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + self.dt * i as f64
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn samples(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    /// Flat row-major sample data.
    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn last(&self) -> &[f64] {
        self.sample(self.len() - 1)
    }

    /// Component `j` at time `t`, linearly interpolated; `None` outside the
    /// sampled time span.
    pub fn value_at(&self, t: f64, j: usize) -> Option<f64> {
        let pos = (t - self.t0) / self.dt;
        let last = (self.len() - 1) as f64;
        if pos < -1e-9 || pos > last + 1e-9 {
            return None;
        }
        let pos = pos.clamp(0.0, last);
        let i = pos.floor() as usize;
        if i as f64 == pos || i + 1 >= self.len() {
            return Some(self.sample(i)[j]);
        }
        let w = pos - i as f64;
        let (a, b) = (self.sample(i)[j], self.sample(i + 1)[j]);
        Some(a + (b - a) * w)
    }

    /// Index of the first tail sample.
    pub fn tail_start(&self, tail_fraction: f64) -> Result<usize, SignalError> {
        if !(tail_fraction > 0.0 && tail_fraction <= 1.0) {
            return Err(SignalError::TailFraction(tail_fraction));
        }
        let n = self.len();
        let tail = ((n as f64 * tail_fraction).ceil() as usize).min(n);
        if tail < 2 {
            return Err(SignalError::InsufficientData { available: tail });
        }
        Ok(n - tail)
    }

    /// Writes `t,x1,…,xm` CSV with 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t");
        for j in 1..=self.dim {
            let _ = write!(out, ",x{j}");
        }
        out.push('\n');
        for (i, s) in self.samples().enumerate() {
            let _ = write!(out, "{}", fmt_full(self.time(i)));
            for v in s {
                let _ = write!(out, ",{}", fmt_full(*v));
            }
            out.push('\n');
        }
        out
    }
}

/// 17 significant digits, enough to round-trip any f64.
pub fn fmt_full(v: f64) -> String {
    format!("{v:.16e}")
}

/// Diameter of the tail sample set: the sampled `limsup |ω(t) − ω(s)|`.
///
/// Scalars use `max − min`. Vectors use exact pairwise distances over the
/// tail thinned by a uniform stride to at most [`MAX_PAIRWISE_POINTS`].
pub fn asymptotic_amplitude(sig: &Signal, tail_fraction: f64) -> Result<f64, SignalError> {
    let start = sig.tail_start(tail_fraction)?;
    if sig.dim() == 1 {
        let tail = &sig.values()[start..];
        let (lo, hi) = tail
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        return Ok(hi - lo);
    }
    let n = sig.len();
    let stride = (n - start).div_ceil(MAX_PAIRWISE_POINTS);
    let mut idx: Vec<usize> = (start..n).step_by(stride).collect();
    if *idx.last().unwrap() != n - 1 {
        idx.push(n - 1);
    }
    let mut best = 0.0f64;
    for (a, &i) in idx.iter().enumerate() {
        let p = sig.sample(i);
        for &k in &idx[a + 1..] {
            let q = sig.sample(k);
            let d2: f64 = p.iter().zip(q).map(|(x, y)| (x - y).powi(2)).sum();
            best = best.max(d2);
        }
    }
    Ok(best.sqrt())
}

/// Diameter of the sampled omega-limit set. On sampled data this is the
/// same tail-set diameter as [`asymptotic_amplitude`].
pub fn omega_limit_diameter(sig: &Signal, tail_fraction: f64) -> Result<f64, SignalError> {
    asymptotic_amplitude(sig, tail_fraction)
}

/// True iff every tail sample is within `eps` of `target`.
pub fn converges_to(sig: &Signal, target: &BoxSet, eps: f64, tail_fraction: f64) -> Result<bool, SignalError> {
    if sig.dim() != target.dim() {
        return Err(SignalError::DimensionMismatch { signal: sig.dim(), set: target.dim() });
    }
    let start = sig.tail_start(tail_fraction)?;
    Ok((start..sig.len()).all(|i| target.distance(sig.sample(i)) <= eps))
}

/// Estimate of `lim ω(t)`: the tail mean, provided the tail amplitude is
/// below `eps`.
pub fn limit_value(sig: &Signal, eps: f64, tail_fraction: f64) -> Result<Option<Vec<f64>>, SignalError> {
    if asymptotic_amplitude(sig, tail_fraction)? >= eps {
        return Ok(None);
    }
    let start = sig.tail_start(tail_fraction)?;
    let count = (sig.len() - start) as f64;
    let mut mean = vec![0.0; sig.dim()];
    for i in start..sig.len() {
        for (m, v) in mean.iter_mut().zip(sig.sample(i)) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= count;
    }
    Ok(Some(mean))
}
