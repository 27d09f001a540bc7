//! Occupation statistics of recorded trajectories and regret accounting.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{dot, Game};
use crate::generator::{col_noise_sums, row_noise_sums};
use crate::ode::Trajectory;
use crate::sde::DiffusionSpec;

pub const DEFAULT_RADIUS: f64 = 0.1;
/// Allowed excess of the deterministic regret over its bound (trapezoid error).
pub const QUADRATURE_SLACK: f64 = 1e-3;
/// Conservative constant in the stochastic regret allowance `C max_k σ_k² t`.
pub const REGRET_C: f64 = 2.0;
/// Largest spacing of recorded times accepted for regret quadrature.
pub const MAX_REGRET_SPACING: f64 = 0.1;

/// A coordinate of the state: `X(i)` is `x_{i+1}`, `Y(j)` is `y_{j+1}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X(usize),
    Y(usize),
}

impl Axis {
    /// Parses `x1`, `x_1`, `y2`, ... (1-based).
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        let (head, tail) = s.split_at(s.len().min(1));
        let idx: usize = tail
            .trim_start_matches('_')
            .parse()
            .map_err(|_| Error::Parse(format!("bad axis {s:?}, expected x1, y2, ...")))?;
        if idx == 0 {
            return Err(Error::Parse(format!("axis indices are 1-based: {s:?}")));
        }
        match head {
            "x" | "X" => Ok(Axis::X(idx - 1)),
            "y" | "Y" => Ok(Axis::Y(idx - 1)),
            _ => Err(Error::Parse(format!("bad axis {s:?}, expected x1, y2, ..."))),
        }
    }

    fn value(&self, traj: &Trajectory, k: usize) -> f64 {
        match self {
            Axis::X(i) => traj.x(k)[*i],
            Axis::Y(j) => traj.y(k)[*j],
        }
    }

    fn check(&self, n: usize, m: usize) -> Result<()> {
        let ok = match self {
            Axis::X(i) => *i < n,
            Axis::Y(j) => *j < m,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::dims("histogram axis", format!("x1..x{n}, y1..y{m}"), self))
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Axis::X(i) => write!(f, "x_{}", i + 1),
            Axis::Y(j) => write!(f, "y_{}", j + 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OccupationHistogram {
    pub axes: Vec<String>,
    pub bins: usize,
    /// Shared bin edges on `[0, 1]` for every axis.
    pub edges: Vec<f64>,
    /// Row-major over the axes, `bins^axes` entries.
    pub counts: Vec<u64>,
    pub total_samples: u64,
    pub burn_in_applied: f64,
}

impl OccupationHistogram {
    fn empty(axes: Vec<String>, bins: usize, burn_in: f64) -> Self {
        let size = bins.pow(axes.len() as u32);
        Self {
            edges: (0..=bins).map(|k| k as f64 / bins as f64).collect(),
            axes,
            bins,
            counts: vec![0; size],
            total_samples: 0,
            burn_in_applied: burn_in,
        }
    }

    #[inline]
    pub fn bin_of(&self, v: f64) -> usize {
        ((v.clamp(0.0, 1.0) * self.bins as f64).floor() as usize).min(self.bins - 1)
    }

    /// Elementwise sum with a histogram over the same axes and bins.
    pub fn merge(&mut self, other: &OccupationHistogram) -> Result<()> {
        if self.axes != other.axes || self.bins != other.bins {
            return Err(Error::precondition("histograms differ in axes or bins"));
        }
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
        self.total_samples += other.total_samples;
        Ok(())
    }

    /// Normalized mass per cell.
    pub fn frequencies(&self) -> Vec<f64> {
        let t = self.total_samples.max(1) as f64;
        self.counts.iter().map(|c| *c as f64 / t).collect()
    }
}

/// Index of the first recorded sample with `t >= burn_in`.
fn window_start(traj: &Trajectory, burn_in: f64) -> Result<usize> {
    if !(burn_in >= 0.0) {
        return Err(Error::precondition(format!("burn_in must be >= 0, got {burn_in}")));
    }
    let k = traj.times().partition_point(|t| *t < burn_in);
    if k >= traj.len() {
        return Err(Error::EmptyWindow(format!(
            "no samples at or after t = {burn_in} (trajectory ends at {})",
            traj.end_time()
        )));
    }
    Ok(k)
}

/// Histogram of post-burn-in samples over `axes` with uniform bins on `[0, 1]`.
pub fn occupation_histogram(traj: &Trajectory, axes: &[Axis], bins: usize, burn_in: f64) -> Result<OccupationHistogram> {
    if bins < 2 {
        return Err(Error::precondition("bins must be at least 2"));
    }
    if axes.is_empty() {
        return Err(Error::precondition("at least one axis is required"));
    }
    let (n, m) = traj.dims();
    axes.iter().try_for_each(|a| a.check(n, m))?;
    let start = window_start(traj, burn_in)?;
    let mut h = OccupationHistogram::empty(axes.iter().map(Axis::to_string).collect(), bins, burn_in);
    for k in start..traj.len() {
        let cell = axes.iter().fold(0, |acc, a| acc * bins + h.bin_of(a.value(traj, k)));
        h.counts[cell] += 1;
    }
    h.total_samples = (traj.len() - start) as u64;
    Ok(h)
}

/// Trapezoid weights of the post-burn-in samples, normalized to sum to 1.
fn window_weights(traj: &Trajectory, burn_in: f64) -> Result<(usize, Vec<f64>)> {
    let start = window_start(traj, burn_in)?;
    let t = &traj.times()[start..];
    if t.len() < 2 || t[t.len() - 1] <= t[0] {
        return Err(Error::EmptyWindow(format!(
            "averaging window after t = {burn_in} has zero length"
        )));
    }
    let span = t[t.len() - 1] - t[0];
    let mut w = vec![0.0; t.len()];
    for k in 0..t.len() - 1 {
        let h = 0.5 * (t[k + 1] - t[k]) / span;
        w[k] += h;
        w[k + 1] += h;
    }
    Ok((start, w))
}

/// Trapezoidal time average of `f(x, y)` over the post-burn-in window.
pub fn time_average(traj: &Trajectory, f: impl Fn(&[f64], &[f64]) -> f64, burn_in: f64) -> Result<f64> {
    let (start, w) = window_weights(traj, burn_in)?;
    Ok(w.iter().enumerate().map(|(k, wk)| wk * f(traj.x(start + k), traj.y(start + k))).sum())
}

/// L1 distance from `(x, y)` to the corner `(e_i, e_j)`.
#[inline]
pub fn corner_distance(x: &[f64], y: &[f64], i: usize, j: usize) -> f64 {
    2.0 * crate::sde::complement(x, i) + 2.0 * crate::sde::complement(y, j)
}

/// Corner nearest to `(x, y)` in L1 (0-based).
#[inline]
pub fn nearest_corner(x: &[f64], y: &[f64]) -> (usize, usize) {
    let arg = |w: &[f64]| (0..w.len()).fold(0, |b, k| if w[k] > w[b] { k } else { b });
    (arg(x), arg(y))
}

/// Indicator of the L1 ball of `radius` around `(e_i, e_j)`, with ties going to the nearest corner.
pub fn in_corner_ball(x: &[f64], y: &[f64], i: usize, j: usize, radius: f64) -> bool {
    nearest_corner(x, y) == (i, j) && corner_distance(x, y, i, j) <= radius
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CornerMass {
    /// 1-based corner indices.
    pub i: usize,
    pub j: usize,
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CornerMassReport {
    pub radius: f64,
    pub window: (f64, f64),
    pub corners: Vec<CornerMass>,
    pub total: f64,
    pub residual: f64,
}

impl CornerMassReport {
    pub fn mass(&self, i: usize, j: usize) -> f64 {
        self.corners.iter().find(|c| c.i == i && c.j == j).map_or(0.0, |c| c.mass)
    }
}

/// Time fraction spent within L1 distance `radius` of each corner after `burn_in`.
pub fn corner_mass(traj: &Trajectory, radius: f64, burn_in: f64) -> Result<CornerMassReport> {
    if !(radius > 0.0 && radius < 0.5) {
        return Err(Error::precondition(format!("radius must lie in (0, 0.5), got {radius}")));
    }
    let (n, m) = traj.dims();
    let (start, w) = window_weights(traj, burn_in)?;
    let mut mass = vec![0.0; n * m];
    for (k, wk) in w.iter().enumerate() {
        let (x, y) = (traj.x(start + k), traj.y(start + k));
        let (i, j) = nearest_corner(x, y);
        if corner_distance(x, y, i, j) <= radius {
            mass[i * m + j] += wk;
        }
    }
    let total: f64 = mass.iter().sum();
    Ok(CornerMassReport {
        radius,
        window: (traj.times()[start], traj.end_time()),
        corners: (0..n * m)
            .map(|c| CornerMass {
                i: c / m + 1,
                j: c % m + 1,
                mass: mass[c],
            })
            .collect(),
        total,
        residual: 1.0 - total,
    })
}

/// Cumulative regrets `r_i(t_k) = ∫_0^{t_k} (u_i - xᵀu) dτ` by the trapezoid rule,
/// with the matching noise allowance.
#[derive(Debug, Clone, PartialEq)]
pub struct RegretSeries {
    pub times: Vec<f64>,
    /// `row[i][k]`: regret of the row player for not playing `i` up to `times[k]`.
    pub row: Vec<Vec<f64>>,
    pub col: Vec<Vec<f64>>,
    pub row_allowance: Vec<f64>,
    pub col_allowance: Vec<f64>,
    pub x0: Vec<f64>,
    pub y0: Vec<f64>,
}

/// Regret series of a trajectory. With `spec` the stochastic allowance is
/// `C max_k σ_k² t` for the diagonal model and `∫ ½ max_i Σ_k R_ik² dτ` otherwise.
pub fn regret_series(g: &Game, traj: &Trajectory, spec: Option<&DiffusionSpec>) -> Result<RegretSeries> {
    let (n, m) = traj.dims();
    if (n, m) != (g.rows(), g.cols()) {
        return Err(Error::dims(
            "trajectory",
            format!("({}, {})", g.rows(), g.cols()),
            format!("({n}, {m})"),
        ));
    }
    if traj.len() < 2 {
        return Err(Error::precondition("regret needs at least two recorded points"));
    }
    let t = traj.times();
    let spacing = t.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    if spacing > MAX_REGRET_SPACING + 1e-12 {
        return Err(Error::precondition(format!(
            "recorded spacing {spacing} exceeds {MAX_REGRET_SPACING}; lower thin or dt"
        )));
    }
    if let Some(s) = spec {
        s.check_dims(n, m)?;
    }
    let mut u = vec![0.0; n];
    let mut v = vec![0.0; m];
    let mut gain = |k: usize| -> Result<(Vec<f64>, Vec<f64>, f64, f64)> {
        let (x, y) = (traj.x(k), traj.y(k));
        g.row_payoffs_into(y, &mut u);
        g.col_payoffs_into(x, &mut v);
        let (pu, pv) = (dot(x, &u), dot(y, &v));
        let (nx, ny) = match spec {
            Some(s @ DiffusionSpec::Custom(_)) => (
                0.5 * row_noise_sums(s, x)?.into_iter().fold(0.0, f64::max),
                0.5 * col_noise_sums(s, y)?.into_iter().fold(0.0, f64::max),
            ),
            _ => (0.0, 0.0),
        };
        Ok((u.iter().map(|a| a - pu).collect(), v.iter().map(|b| b - pv).collect(), nx, ny))
    };
    let mut row = vec![vec![0.0; t.len()]; n];
    let mut col = vec![vec![0.0; t.len()]; m];
    let mut ra = vec![0.0; t.len()];
    let mut ca = vec![0.0; t.len()];
    let mut prev = gain(0)?;
    for k in 1..t.len() {
        let cur = gain(k)?;
        let h = 0.5 * (t[k] - t[k - 1]);
        for i in 0..n {
            row[i][k] = row[i][k - 1] + h * (prev.0[i] + cur.0[i]);
        }
        for j in 0..m {
            col[j][k] = col[j][k - 1] + h * (prev.1[j] + cur.1[j]);
        }
        ra[k] = ra[k - 1] + h * (prev.2 + cur.2);
        ca[k] = ca[k - 1] + h * (prev.3 + cur.3);
        prev = cur;
    }
    if let Some(DiffusionSpec::Diagonal { sigma, eta }) = spec {
        let rate = |s: &[f64]| REGRET_C * s.iter().map(|v| v * v).fold(0.0, f64::max);
        let (rs, rc) = (rate(sigma), rate(eta));
        ra = t.iter().map(|tk| rs * (tk - t[0])).collect();
        ca = t.iter().map(|tk| rc * (tk - t[0])).collect();
    }
    Ok(RegretSeries {
        times: t.to_vec(),
        row,
        col,
        row_allowance: ra,
        col_allowance: ca,
        x0: traj.x(0).to_vec(),
        y0: traj.y(0).to_vec(),
    })
}

impl RegretSeries {
    /// Pointwise mean of series recorded at the same times from the same start.
    pub fn mean(all: &[RegretSeries]) -> Result<RegretSeries> {
        let first = all.first().ok_or_else(|| Error::precondition("no series to average"))?;
        if all.iter().any(|s| s.times != first.times || s.x0 != first.x0 || s.y0 != first.y0) {
            return Err(Error::precondition("series differ in recorded times or initial state"));
        }
        let k = all.len() as f64;
        let avg = |get: &dyn Fn(&RegretSeries) -> &Vec<f64>| -> Vec<f64> {
            let mut out = vec![0.0; first.times.len()];
            for s in all {
                out.iter_mut().zip(get(s)).for_each(|(o, v)| *o += v / k);
            }
            out
        };
        Ok(RegretSeries {
            times: first.times.clone(),
            row: (0..first.row.len()).map(|i| avg(&|s| &s.row[i])).collect(),
            col: (0..first.col.len()).map(|j| avg(&|s| &s.col[j])).collect(),
            row_allowance: avg(&|s| &s.row_allowance),
            col_allowance: avg(&|s| &s.col_allowance),
            x0: first.x0.clone(),
            y0: first.y0.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyRegret {
    /// `x_i` or `y_j`, 1-based.
    pub strategy: String,
    pub final_regret: f64,
    pub max_regret: f64,
    /// `-ln w(0)`; `None` when the strategy starts at 0 (bound is infinite).
    pub bound: Option<f64>,
    /// Largest `r(t) - bound - allowance(t)` over the recorded times.
    pub worst_excess: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretReport {
    pub t_end: f64,
    pub points: usize,
    pub replicas: usize,
    pub stochastic: bool,
    pub allowance_at_end: (f64, f64),
    pub slack: f64,
    pub strategies: Vec<StrategyRegret>,
    /// Recorded (time, strategy) pairs where `r > bound + allowance + slack`.
    pub exceed_events: usize,
}

impl RegretReport {
    pub fn from_series(s: &RegretSeries, replicas: usize, stochastic: bool) -> Self {
        let mut strategies = Vec::new();
        let mut exceed = 0;
        let blocks = [('x', &s.row, &s.x0, &s.row_allowance), ('y', &s.col, &s.y0, &s.col_allowance)];
        for (name, series, w0, allow) in blocks {
            for (i, r) in series.iter().enumerate() {
                let bound = (w0[i] > 0.0).then(|| -w0[i].ln());
                let worst = bound.map(|b| {
                    r.iter()
                        .zip(allow.iter())
                        .map(|(rk, ak)| rk - b - ak)
                        .fold(f64::NEG_INFINITY, f64::max)
                });
                if let Some(b) = bound {
                    exceed += r
                        .iter()
                        .zip(allow.iter())
                        .filter(|(rk, ak)| **rk > b + **ak + QUADRATURE_SLACK)
                        .count();
                }
                strategies.push(StrategyRegret {
                    strategy: format!("{name}_{}", i + 1),
                    final_regret: *r.last().unwrap_or(&0.0),
                    max_regret: r.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                    bound,
                    worst_excess: worst,
                });
            }
        }
        RegretReport {
            t_end: *s.times.last().unwrap_or(&0.0),
            points: s.times.len(),
            replicas,
            stochastic,
            allowance_at_end: (
                *s.row_allowance.last().unwrap_or(&0.0),
                *s.col_allowance.last().unwrap_or(&0.0),
            ),
            slack: QUADRATURE_SLACK,
            strategies,
            exceed_events: exceed,
        }
    }
}

/// Regret of a single trajectory against `-ln w(0)` (+ the noise allowance when `spec` is given).
pub fn regret_report(g: &Game, traj: &Trajectory, spec: Option<&DiffusionSpec>) -> Result<RegretReport> {
    let stochastic = spec.is_some_and(|s| match s {
        DiffusionSpec::Diagonal { sigma, eta } => sigma.iter().chain(eta).any(|v| *v > 0.0),
        DiffusionSpec::Custom(_) => true,
    });
    let s = regret_series(g, traj, spec)?;
    Ok(RegretReport::from_series(&s, 1, stochastic))
}
