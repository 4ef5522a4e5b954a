//! Rate estimation on indexed series: log-log power fits, reciprocal-log
//! fits and ratio bands against a declared rate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum number of points a fit accepts.
pub const MIN_FIT_POINTS: usize = 10;

/// Provenance attached to every series.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeriesMeta {
    pub source: String,
    pub config_hash: String,
}

/// Per-stage scalars indexed by strictly increasing stages.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SeriesResult {
    pub stages: Vec<u64>,
    pub values: Vec<f64>,
    pub meta: SeriesMeta,
}

impl SeriesResult {
    pub fn new(stages: Vec<u64>, values: Vec<f64>) -> Self {
        debug_assert_eq!(stages.len(), values.len());
        debug_assert!(stages.windows(2).all(|w| w[0] < w[1]));
        Self {
            stages,
            values,
            meta: SeriesMeta::default(),
        }
    }

    pub fn from_fn(stages: impl IntoIterator<Item = u64>, f: impl Fn(u64) -> f64) -> Self {
        let stages: Vec<u64> = stages.into_iter().collect();
        let values = stages.iter().map(|&k| f(k)).collect();
        Self::new(stages, values)
    }

    pub fn with_source(mut self, source: &str) -> Self {
        self.meta.source = source.to_string();
        self
    }

    pub fn len(&self) -> usize {
        self.stages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }

    pub fn last(&self) -> Option<(u64, f64)> {
        Some((*self.stages.last()?, *self.values.last()?))
    }

    /// Value at an exact stage, if recorded.
    pub fn at(&self, stage: u64) -> Option<f64> {
        self.stages
            .binary_search(&stage)
            .ok()
            .map(|i| self.values[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, f64)> + '_ {
        self.stages.iter().copied().zip(self.values.iter().copied())
    }

    fn window(&self, k_min: u64) -> impl Iterator<Item = (u64, f64)> + '_ {
        self.iter().filter(move |&(k, _)| k >= k_min)
    }
}

/// Stages `1..=min(dense, horizon)` followed by about `geometric` log-spaced
/// stages up to `horizon` (always included).
pub fn stage_grid(horizon: u64, dense: u64, geometric: usize) -> Vec<u64> {
    let mut grid: Vec<u64> = (1..=dense.min(horizon)).collect();
    if horizon > dense && geometric > 0 {
        let lo = (dense.max(1) as f64).ln();
        let hi = (horizon as f64).ln();
        for i in 1..=geometric {
            let k = (lo + (hi - lo) * i as f64 / geometric as f64).exp().round() as u64;
            let k = k.clamp(dense + 1, horizon);
            if grid.last() != Some(&k) {
                grid.push(k);
            }
        }
        if grid.last() != Some(&horizon) {
            grid.push(horizon);
        }
    }
    grid
}

/// Geometric grid from `k_min` to `k_max` with `points` stages (deduplicated).
pub fn geometric_grid(k_min: u64, k_max: u64, points: usize) -> Vec<u64> {
    let lo = (k_min.max(1) as f64).ln();
    let hi = (k_max as f64).ln();
    let mut grid = Vec::with_capacity(points);
    for i in 0..points {
        let t = if points > 1 {
            i as f64 / (points - 1) as f64
        } else {
            1.0
        };
        let k = (lo + (hi - lo) * t).exp().round() as u64;
        let k = k.clamp(k_min, k_max);
        if grid.last().is_none_or(|&last| k > last) {
            grid.push(k);
        }
    }
    grid
}

/// Default burn-in: `max(1000, last_stage / 100)`.
pub fn default_k_min(series: &SeriesResult) -> u64 {
    let last = series.stages.last().copied().unwrap_or(0);
    (last / 100).max(1000)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub points: usize,
}

/// Ordinary least squares of `y` on `x`.
pub fn least_squares(x: &[f64], y: &[f64]) -> LinearFit {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (&xi, &yi) in x.iter().zip(y) {
        let dx = xi - mx;
        let dy = yi - my;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy > 0.0 {
        (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0)
    } else {
        1.0
    };
    LinearFit {
        slope,
        intercept,
        r2,
        points: x.len(),
    }
}

fn fit_points(
    series: &SeriesResult,
    k_min: u64,
    regressor: impl Fn(u64) -> f64,
    response: impl Fn(f64) -> f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (k, v) in series.window(k_min) {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::NonPositive { stage: k, value: v });
        }
        xs.push(regressor(k));
        ys.push(response(v));
    }
    if xs.len() < MIN_FIT_POINTS {
        return Err(Error::InsufficientPoints {
            needed: MIN_FIT_POINTS,
            found: xs.len(),
            k_min,
        });
    }
    Ok((xs, ys))
}

/// Slope and r2 of `log(value)` against `log(stage)` over stages `>= k_min`.
pub fn fit_power(series: &SeriesResult, k_min: u64) -> Result<LinearFit> {
    let (x, y) = fit_points(series, k_min, |k| (k as f64).ln(), f64::ln)?;
    Ok(least_squares(&x, &y))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "transform", rename_all = "snake_case")]
pub enum LogTransform {
    /// `g(k) = ln k`
    Log,
    /// `g(k) = (ln k)^q`
    LogPow { q: f64 },
    /// `g(k) = ln ln k`
    LogLog,
}

impl LogTransform {
    pub fn apply(self, k: u64) -> f64 {
        let l = (k as f64).ln();
        match self {
            LogTransform::Log => l,
            LogTransform::LogPow { q } => l.powf(q),
            LogTransform::LogLog => l.ln(),
        }
    }
}

/// Least squares of `1 / value` against `g(k)`: `coeff` is the slope.
pub fn fit_reciprocal_log(
    series: &SeriesResult,
    transform: LogTransform,
    k_min: u64,
) -> Result<LinearFit> {
    let (x, y) = fit_points(series, k_min.max(3), |k| transform.apply(k), |v| 1.0 / v)?;
    Ok(least_squares(&x, &y))
}

/// Exponent `q` for which `1 / value` is most nearly affine in `(ln k)^q`,
/// found by profile least squares over `q` in `[q_lo, q_hi]`.
pub fn fit_log_exponent(
    series: &SeriesResult,
    k_min: u64,
    q_lo: f64,
    q_hi: f64,
) -> Result<(f64, LinearFit)> {
    let r2_at = |q: f64| fit_reciprocal_log(series, LogTransform::LogPow { q }, k_min);
    // Coarse scan, then golden-section refinement around the best cell.
    let cells = 200;
    let step = (q_hi - q_lo) / cells as f64;
    let mut best = (q_lo, r2_at(q_lo)?);
    for i in 1..=cells {
        let q = q_lo + step * i as f64;
        let fit = r2_at(q)?;
        if fit.r2 > best.1.r2 {
            best = (q, fit);
        }
    }
    let (mut a, mut b) = ((best.0 - step).max(q_lo), (best.0 + step).min(q_hi));
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..60 {
        let c = b - phi * (b - a);
        let d = a + phi * (b - a);
        if r2_at(c)?.r2 > r2_at(d)?.r2 {
            b = d;
        } else {
            a = c;
        }
    }
    let q = 0.5 * (a + b);
    let fit = r2_at(q)?;
    Ok(if fit.r2 >= best.1.r2 { (q, fit) } else { best })
}

/// `(min, max)` of `value_k / rate(k)` over stages `>= k_min`.
pub fn theta_sandwich(series: &SeriesResult, rate: impl Fn(u64) -> f64, k_min: u64) -> (f64, f64) {
    series
        .window(k_min)
        .map(|(k, v)| v / rate(k))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
            (lo.min(r), hi.max(r))
        })
}
