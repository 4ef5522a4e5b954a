//! Deterministic recursions `c_{k+1} = c_k (1 - delta_k c_k^n)` and the rate
//! laws derived from them.
//!
//! With `delta_k = rho(1) Q_k` and `n = 1` the recursion is the public belief
//! along the all-zeros broadcast path for the constant-density model; with
//! polynomial tails it becomes `delta_k = (gamma / (beta + 1)) Q_k` and
//! `n = beta + 1`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::analysis::SeriesResult;
use crate::belief::BeliefModel;
use crate::channels::FlipSchedule;
use crate::error::{Error, Result};

#[derive(Clone)]
pub enum DeltaSchedule {
    Constant(f64),
    /// `scale * k^-exponent`
    Power {
        scale: f64,
        exponent: f64,
    },
    /// `scale * ratio^k`
    Geometric {
        scale: f64,
        ratio: f64,
    },
    /// `factor * Q_k` for a flip schedule.
    Informativeness {
        schedule: FlipSchedule,
        factor: f64,
    },
    Custom(Arc<dyn Fn(u64) -> f64 + Send + Sync>),
}

impl std::fmt::Debug for DeltaSchedule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DeltaSchedule::Constant(d) => write!(f, "Constant({d})"),
            DeltaSchedule::Power { scale, exponent } => write!(f, "Power({scale} k^-{exponent})"),
            DeltaSchedule::Geometric { scale, ratio } => {
                write!(f, "Geometric({scale} * {ratio}^k)")
            }
            DeltaSchedule::Informativeness { schedule, factor } => {
                write!(
                    f,
                    "Informativeness({factor} * Q_k of {:?})",
                    schedule.family()
                )
            }
            DeltaSchedule::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl DeltaSchedule {
    pub fn at(&self, k: u64) -> f64 {
        match self {
            DeltaSchedule::Constant(d) => *d,
            DeltaSchedule::Power { scale, exponent } => scale * (k as f64).powf(-exponent),
            DeltaSchedule::Geometric { scale, ratio } => scale * ratio.powf(k as f64),
            DeltaSchedule::Informativeness { schedule, factor } => {
                factor * schedule.informativeness_at(k)
            }
            DeltaSchedule::Custom(f) => f(k),
        }
    }

    pub fn constant_value(&self) -> Option<f64> {
        match self {
            DeltaSchedule::Constant(d) => Some(*d),
            DeltaSchedule::Informativeness { schedule, factor } if schedule.is_constant() => {
                Some(factor * schedule.informativeness_at(1))
            }
            _ => None,
        }
    }
}

/// Which constant multiplies `Q_k` in the polynomial-tail recursion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailCoefficient {
    /// `gamma / (beta + 1)`, the value of the tail integral.
    #[default]
    Integral,
    /// `gamma / beta` (falls back to `gamma` at `beta = 0`).
    Published,
}

#[derive(Debug, Clone)]
pub struct RecursionSpec {
    pub initial: f64,
    pub exponent_n: f64,
    pub delta: DeltaSchedule,
}

impl RecursionSpec {
    pub fn new(initial: f64, exponent_n: f64, delta: DeltaSchedule) -> Result<Self> {
        if !(initial > 0.0 && initial < 1.0) {
            return Err(Error::Domain {
                what: "initial",
                value: initial,
                domain: "(0, 1)",
            });
        }
        if exponent_n.is_nan() || exponent_n < 1.0 {
            return Err(Error::Domain {
                what: "exponent_n",
                value: exponent_n,
                domain: "[1, inf)",
            });
        }
        Ok(Self {
            initial,
            exponent_n,
            delta,
        })
    }

    /// Public belief along the all-zeros broadcast path under `flips`.
    pub fn conditional_path(
        model: &BeliefModel,
        flips: FlipSchedule,
        initial: f64,
        coefficient: TailCoefficient,
    ) -> Result<Self> {
        let (beta, gamma) = model.tail_constants();
        let factor = match coefficient {
            TailCoefficient::Integral => gamma / (beta + 1.0),
            TailCoefficient::Published if beta > 0.0 => gamma / beta,
            TailCoefficient::Published => gamma,
        };
        Self::new(
            initial,
            beta + 1.0,
            DeltaSchedule::Informativeness {
                schedule: flips,
                factor,
            },
        )
    }

    fn step(&self, k: u64, c: f64) -> Result<f64> {
        let product = self.delta.at(k) * c.powf(self.exponent_n);
        if product.is_nan() || product >= 1.0 {
            return Err(Error::StepSize { k, product });
        }
        Ok(c * (1.0 - product))
    }

    /// Visit `(k, c_k)` for `k = 1..=horizon`.
    pub fn for_each(&self, horizon: u64, mut visit: impl FnMut(u64, f64)) -> Result<()> {
        let mut c = self.initial;
        for k in 1..=horizon {
            visit(k, c);
            if k < horizon {
                c = self.step(k, c)?;
            }
        }
        Ok(())
    }
}

/// `c_1..c_K`.
pub fn iterate_recursion(spec: &RecursionSpec, horizon: u64) -> Result<SeriesResult> {
    let mut stages = Vec::with_capacity(horizon as usize);
    let mut values = Vec::with_capacity(horizon as usize);
    spec.for_each(horizon, |k, c| {
        stages.push(k);
        values.push(c);
    })?;
    Ok(SeriesResult::new(stages, values).with_source("recursion"))
}

/// `c_k` recorded only at the given increasing `stages` (all `<= horizon`).
pub fn iterate_on_grid(spec: &RecursionSpec, horizon: u64, stages: &[u64]) -> Result<SeriesResult> {
    let mut values = Vec::with_capacity(stages.len());
    let mut next = stages.iter().peekable();
    spec.for_each(horizon, |k, c| {
        if next.peek() == Some(&&k) {
            values.push(c);
            next.next();
        }
    })?;
    let stages = stages[..values.len()].to_vec();
    Ok(SeriesResult::new(stages, values).with_source("recursion"))
}

/// Extremes of `c_k (delta k)^(1/n)` over every `k` in `[k_min, horizon]`.
pub fn lemma3_sandwich(spec: &RecursionSpec, horizon: u64, k_min: u64) -> Result<(f64, f64)> {
    let delta = spec
        .delta
        .constant_value()
        .ok_or_else(|| Error::Config("sandwich check needs a constant delta".into()))?;
    let inv_n = 1.0 / spec.exponent_n;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    spec.for_each(horizon, |k, c| {
        if k >= k_min {
            let r = c * (delta * k as f64).powf(inv_n);
            lo = lo.min(r);
            hi = hi.max(r);
        }
    })?;
    Ok((lo, hi))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum LimitClass {
    ConvergesToZero,
    PositiveLimit { estimate: f64 },
    Inconclusive { relative_change: f64, decay: f64 },
}

/// Iterates at the checkpoints `K/8, K/4, K/2, K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoints {
    pub stages: [u64; 4],
    pub values: [f64; 4],
    pub initial: f64,
}

pub fn checkpoints(spec: &RecursionSpec, horizon: u64) -> Result<Checkpoints> {
    let stages = [
        (horizon / 8).max(1),
        (horizon / 4).max(1),
        (horizon / 2).max(1),
        horizon,
    ];
    let mut values = [0.0; 4];
    spec.for_each(horizon, |k, c| {
        for (i, &s) in stages.iter().enumerate() {
            if s == k {
                values[i] = c;
            }
        }
    })?;
    Ok(Checkpoints {
        stages,
        values,
        initial: spec.initial,
    })
}

/// Decide whether the iterates go to zero or settle at a positive limit.
///
/// * positive limit: relative change over the last doubling `< tol`, and the
///   last iterate is well above machine epsilon;
/// * converges to zero: `c_K < tol * c_1`, or the growth of `c^-n` per
///   doubling is not dying out (each doubling adds at least half of what the
///   previous one added), which is how a divergent `sum delta_k` shows up
///   at a finite horizon;
/// * otherwise inconclusive, with both statistics.
pub fn lemma4_classify(spec: &RecursionSpec, horizon: u64, tol: f64) -> Result<LimitClass> {
    Ok(classify_checkpoints(
        &checkpoints(spec, horizon)?,
        spec.exponent_n,
        tol,
    ))
}

pub fn classify_checkpoints(cp: &Checkpoints, exponent_n: f64, tol: f64) -> LimitClass {
    let [_, _, half, last] = cp.values;
    let relative_change = (last - half).abs() / half;
    let decay = last / cp.initial;
    if relative_change < tol && last > 10.0 * f64::EPSILON {
        return LimitClass::PositiveLimit { estimate: last };
    }
    if decay < tol {
        return LimitClass::ConvergesToZero;
    }
    let inv: Vec<f64> = cp.values.iter().map(|c| c.powf(-exponent_n)).collect();
    let increments = [inv[1] - inv[0], inv[2] - inv[1], inv[3] - inv[2]];
    if increments.iter().all(|&d| d > 0.0)
        && increments[2] >= 0.5 * increments[1]
        && increments[1] >= 0.5 * increments[0]
    {
        return LimitClass::ConvergesToZero;
    }
    LimitClass::Inconclusive {
        relative_change,
        decay,
    }
}

/// Type-I error lower-bound proxy from a public-belief series.
///
/// `beta = 0`: `(rho(1) / 4) b_{k-1}^2`, reported at stage `k` (so the output
/// stages are the input stages shifted by one). `beta > 0`:
/// `(gamma / (beta + 1)) b_k^(beta + 2)` at the same stage.
pub fn type1_lower_bound(belief_series: &SeriesResult, model: &BeliefModel) -> SeriesResult {
    let (beta, gamma) = model.tail_constants();
    let mut out = if beta == 0.0 {
        SeriesResult::new(
            belief_series.stages.iter().map(|k| k + 1).collect(),
            belief_series
                .values
                .iter()
                .map(|b| gamma / 4.0 * b * b)
                .collect(),
        )
    } else {
        SeriesResult::new(
            belief_series.stages.clone(),
            belief_series
                .values
                .iter()
                .map(|b| gamma / (beta + 1.0) * b.powf(beta + 2.0))
                .collect(),
        )
    };
    out.meta = belief_series.meta.clone();
    out.meta.source = "type1_lower_bound".into();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{fit_power, geometric_grid};
    use crate::channels::FlipFamily;
    use approx::assert_abs_diff_eq;

    fn spec(initial: f64, n: f64, delta: DeltaSchedule) -> RecursionSpec {
        RecursionSpec::new(initial, n, delta).unwrap()
    }

    #[test]
    fn first_iterates() {
        let s = iterate_recursion(&spec(0.5, 1.0, DeltaSchedule::Constant(1.0)), 3).unwrap();
        assert_eq!(s.values, vec![0.5, 0.25, 0.1875]);
        let flat = iterate_recursion(&spec(0.3, 1.0, DeltaSchedule::Constant(0.0)), 50).unwrap();
        assert!(flat.values.iter().all(|&v| v == 0.3));
    }

    #[test]
    fn long_iteration_tracks_one_over_k() {
        let s = spec(0.5, 1.0, DeltaSchedule::Constant(1.0));
        let mut last = 0.0;
        s.for_each(1_000_000, |_, c| last = c).unwrap();
        let scaled = last * 1e6;
        assert!((0.5..=2.0).contains(&scaled), "{scaled}");
    }

    #[test]
    fn grid_recording_matches_full_series() {
        let s = spec(
            0.4,
            2.0,
            DeltaSchedule::Power {
                scale: 1.0,
                exponent: 0.5,
            },
        );
        let full = iterate_recursion(&s, 5000).unwrap();
        let grid = geometric_grid(1, 5000, 40);
        let sparse = iterate_on_grid(&s, 5000, &grid).unwrap();
        for (k, v) in sparse.iter() {
            assert_eq!(full.at(k), Some(v));
        }
        assert_eq!(sparse.len(), grid.len());
    }

    #[test]
    fn step_size_violation_names_the_stage() {
        let s = spec(
            0.5,
            1.0,
            DeltaSchedule::Custom(Arc::new(|k| if k == 7 { 100.0 } else { 0.1 })),
        );
        match iterate_recursion(&s, 20) {
            Err(Error::StepSize { k, .. }) => assert_eq!(k, 7),
            other => panic!("{other:?}"),
        }
        assert!(RecursionSpec::new(1.0, 1.0, DeltaSchedule::Constant(1.0)).is_err());
        assert!(RecursionSpec::new(0.5, 0.5, DeltaSchedule::Constant(1.0)).is_err());
    }

    #[test]
    fn iterates_decrease_strictly_and_stay_positive() {
        for n in [1.0, 2.0, 3.0] {
            let s = spec(
                0.9,
                n,
                DeltaSchedule::Power {
                    scale: 0.5,
                    exponent: 0.7,
                },
            );
            let mut prev = f64::INFINITY;
            s.for_each(100_000, |_, c| {
                assert!(c > 0.0 && c < prev);
                prev = c;
            })
            .unwrap();
        }
    }

    #[test]
    fn sandwich_n2() {
        let s = spec(0.5, 2.0, DeltaSchedule::Constant(0.5));
        let (lo, hi) = lemma3_sandwich(&s, 1_000_000, 1000).unwrap();
        assert!(lo > 0.0 && hi.is_finite());
        assert!(hi / lo < 2.0);
        // dc/dk = -delta c^3 gives c (delta k)^(1/2) -> 1/sqrt(2).
        assert_abs_diff_eq!(hi, 0.5f64.sqrt(), epsilon = 0.01);
    }

    #[test]
    fn sandwich_n1_slope() {
        let s = spec(0.5, 1.0, DeltaSchedule::Constant(1.0));
        let grid = geometric_grid(1000, 1_000_000, 100);
        let series = iterate_on_grid(&s, 1_000_000, &grid).unwrap();
        let fit = fit_power(&series, 1000).unwrap();
        assert_abs_diff_eq!(fit.slope, -1.0, epsilon = 0.02);
    }

    #[test]
    fn sandwich_with_tiny_start_has_burn_in() {
        // c_1 = 1e-9 barely moves for ~1e9 steps: the band is far from flat early on.
        let s = spec(1e-9, 1.0, DeltaSchedule::Constant(1.0));
        let (lo, hi) = lemma3_sandwich(&s, 100_000, 1000).unwrap();
        assert!(lo > 0.0 && hi / lo > 50.0);
    }

    #[test]
    fn sandwich_needs_constant_delta() {
        let s = spec(
            0.5,
            1.0,
            DeltaSchedule::Power {
                scale: 1.0,
                exponent: 1.0,
            },
        );
        assert!(lemma3_sandwich(&s, 100, 10).is_err());
    }

    #[test]
    fn classification_examples() {
        let k = 1_000_000;
        let div = spec(
            0.5,
            1.0,
            DeltaSchedule::Power {
                scale: 1.0,
                exponent: 1.0,
            },
        );
        assert_eq!(
            lemma4_classify(&div, k, 1e-3).unwrap(),
            LimitClass::ConvergesToZero
        );
        let geo = spec(
            0.5,
            1.0,
            DeltaSchedule::Geometric {
                scale: 1.0,
                ratio: 0.5,
            },
        );
        assert!(matches!(
            lemma4_classify(&geo, k, 1e-3).unwrap(),
            LimitClass::PositiveLimit { .. }
        ));
        let flat = spec(0.5, 1.0, DeltaSchedule::Constant(0.5));
        assert_eq!(
            lemma4_classify(&flat, k, 1e-3).unwrap(),
            LimitClass::ConvergesToZero
        );
    }

    #[test]
    fn geometric_delta_limit_matches_product() {
        // With delta_k = 2^-k the product form gives the plateau directly.
        let s = spec(
            0.5,
            1.0,
            DeltaSchedule::Geometric {
                scale: 1.0,
                ratio: 0.5,
            },
        );
        let mut c = 0.5;
        for k in 1..200u64 {
            c *= 1.0 - 0.5f64.powi(k as i32) * c;
        }
        match lemma4_classify(&s, 100_000, 1e-3).unwrap() {
            LimitClass::PositiveLimit { estimate } => {
                assert_abs_diff_eq!(estimate, c, epsilon = 1e-15)
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn type1_bound_examples() {
        let model = BeliefModel::uniform();
        let b = SeriesResult::new(vec![4], vec![0.2]);
        let t = type1_lower_bound(&b, &model);
        assert_eq!(t.stages, vec![5]);
        assert_abs_diff_eq!(t.values[0], 0.02, epsilon = 1e-15);
        let zero = type1_lower_bound(&SeriesResult::new(vec![1], vec![0.0]), &model);
        assert_eq!(zero.values[0], 0.0);
        let poly = BeliefModel::new(1.0, 0.5).unwrap();
        let t = type1_lower_bound(&b, &poly);
        assert_eq!(t.stages, vec![4]);
        assert_abs_diff_eq!(t.values[0], 6.0 * 0.2f64.powi(3), epsilon = 1e-12);
    }

    #[test]
    fn type1_bound_of_reciprocal_series_has_slope_minus_two() {
        let grid = geometric_grid(1000, 1_000_000, 100);
        let b = SeriesResult::from_fn(grid, |k| 1.0 / k as f64);
        let t = type1_lower_bound(&b, &BeliefModel::uniform());
        let fit = fit_power(&t, 1000).unwrap();
        assert_abs_diff_eq!(fit.slope, -2.0, epsilon = 0.1);
    }

    #[test]
    fn conditional_path_coefficients() {
        let flips = FlipSchedule::constant(0.1).unwrap();
        let u = RecursionSpec::conditional_path(
            &BeliefModel::uniform(),
            flips.clone(),
            0.25,
            TailCoefficient::Integral,
        )
        .unwrap();
        assert_eq!(u.exponent_n, 1.0);
        assert_abs_diff_eq!(u.delta.at(9), 2.0 * 0.8 / 0.9, epsilon = 1e-12);
        let poly = BeliefModel::new(1.0, 0.5).unwrap();
        let a =
            RecursionSpec::conditional_path(&poly, flips.clone(), 0.25, TailCoefficient::Integral)
                .unwrap();
        let b = RecursionSpec::conditional_path(&poly, flips, 0.25, TailCoefficient::Published)
            .unwrap();
        assert_eq!(a.exponent_n, 2.0);
        assert_abs_diff_eq!(a.delta.at(1), 6.0 * 0.8 / 0.9, epsilon = 1e-9);
        assert_abs_diff_eq!(b.delta.at(1), 12.0 * 0.8 / 0.9, epsilon = 1e-9);
    }

    #[test]
    fn summable_informativeness_plateaus() {
        let flips =
            FlipSchedule::from_informativeness(FlipFamily::LogPower { p: 2.0 }, 1.0).unwrap();
        let s = RecursionSpec::conditional_path(
            &BeliefModel::uniform(),
            flips,
            0.25,
            TailCoefficient::Integral,
        )
        .unwrap();
        match lemma4_classify(&s, 10_000_000, 1e-3).unwrap() {
            LimitClass::PositiveLimit { estimate } => assert!(estimate > 0.025),
            other => panic!("{other:?}"),
        }
    }
}
