//! Exact error probabilities for bounded memory.
//!
//! With memory `C`, the last `min(C, k - 1)` corrupted decisions form a
//! Markov chain under each hypothesis. Node `k` applies the MAP test to the
//! exact window likelihood ratio, so propagating the two window
//! distributions gives the exact Type-I/Type-II error of every node.
//!
//! For full memory with flipping, [`martingale_check`] enumerates every
//! corrupted history up to a small horizon.

use serde::{Deserialize, Serialize};

use crate::belief::BeliefModel;
use crate::channels::{Channel, FlipSchedule};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::strategy::{decide_one_probs, ThresholdRule};

/// Largest memory the window DP accepts (3^12 states for erasure).
pub const MAX_WINDOW: u32 = 12;
/// Largest horizon for exhaustive history enumeration.
pub const MAX_ENUMERATION: u32 = 14;

/// Distribution of the last `window_length` corrupted decisions under H0 and
/// H1. State index `sum_i s_i A^i` with `s_0` the most recent symbol.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowDistribution {
    window_length: usize,
    alphabet: usize,
    mass: [Vec<f64>; 2],
}

impl WindowDistribution {
    /// Empty window seen by the first node.
    pub fn initial(alphabet: usize) -> Self {
        Self {
            window_length: 0,
            alphabet,
            mass: [vec![1.0], vec![1.0]],
        }
    }

    pub fn window_length(&self) -> usize {
        self.window_length
    }

    pub fn alphabet(&self) -> usize {
        self.alphabet
    }

    pub fn mass(&self, hypothesis: usize) -> &[f64] {
        &self.mass[hypothesis]
    }

    pub fn states(&self) -> usize {
        self.mass[0].len()
    }

    /// Window likelihood ratio `P1(w) / P0(w)`; unreachable states get 1.
    pub fn likelihood_ratio(&self, state: usize) -> f64 {
        let (m0, m1) = (self.mass[0][state], self.mass[1][state]);
        match (m0 > 0.0, m1 > 0.0) {
            (true, true) => m1 / m0,
            (false, false) => 1.0,
            (false, true) => f64::INFINITY,
            (true, false) => 0.0,
        }
    }

    /// Whether the all-zeros window has the smallest and the all-ones window
    /// the largest ratio among reachable states.
    pub fn extremes_ordered(&self) -> bool {
        if self.window_length == 0 {
            return true;
        }
        let all_ones: usize = (0..self.window_length)
            .map(|i| self.alphabet.pow(i as u32))
            .sum();
        let reachable = |s: usize| self.mass[0][s] > 0.0 || self.mass[1][s] > 0.0;
        let lo = self.likelihood_ratio(0);
        let hi = self.likelihood_ratio(all_ones);
        (0..self.states()).filter(|&s| reachable(s)).all(|s| {
            let r = self.likelihood_ratio(s);
            r >= lo * (1.0 - 1e-12) && r <= hi * (1.0 + 1e-12)
        })
    }
}

/// Exact per-stage quantities returned by [`evolve_window`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageError {
    /// `pi0 P0(d = 1) + pi1 P1(d = 0)`
    pub error: f64,
    pub type1: f64,
    pub type2: f64,
}

/// Advance the window distribution past node `k` (whose window is `dist`).
///
/// Also returns the per-state MAP cutoffs used by node `k`.
pub fn evolve_window(
    dist: &WindowDistribution,
    k: u64,
    memory_bound: u32,
    depth: u64,
    model: &BeliefModel,
    channel: &Channel,
    rule: &ThresholdRule,
) -> Result<(WindowDistribution, StageError, Vec<f64>)> {
    let a = dist.alphabet;
    if a != channel.alphabet() {
        return Err(Error::Config(format!(
            "window alphabet {a} does not match channel alphabet {}",
            channel.alphabet()
        )));
    }
    let next_len = (memory_bound as usize).min(k as usize);
    let next_states = a.pow(next_len as u32);
    // Keep only the newest next_len - 1 old symbols.
    let keep = a.pow(next_len.saturating_sub(1) as u32);
    let emit = [
        channel.symbol_probs(k, depth, 0),
        channel.symbol_probs(k, depth, 1),
    ];

    let mut next = [vec![0.0; next_states], vec![0.0; next_states]];
    let mut cutoffs = Vec::with_capacity(dist.states());
    let (mut type1, mut type2) = (0.0, 0.0);
    for state in 0..dist.states() {
        let cutoff = rule.cutoff(dist.likelihood_ratio(state));
        cutoffs.push(cutoff);
        let (m0, m1) = (dist.mass[0][state], dist.mass[1][state]);
        if m0 == 0.0 && m1 == 0.0 {
            continue;
        }
        let one = decide_one_probs(cutoff, model);
        type1 += m0 * one.0;
        type2 += m1 * (1.0 - one.1);
        let base = if next_len == 0 { 0 } else { (state % keep) * a };
        for (h, (m, u)) in [(m0, one.0), (m1, one.1)].into_iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            for sym in 0..a {
                let p = u * emit[1][sym] + (1.0 - u) * emit[0][sym];
                if p > 0.0 && next_len > 0 {
                    next[h][base + sym] += m * p;
                }
            }
        }
    }
    let [next0, next1] = next;
    let next = WindowDistribution {
        window_length: next_len,
        alphabet: a,
        mass: if next_len == 0 {
            [vec![1.0], vec![1.0]]
        } else {
            [next0, next1]
        },
    };
    let error = model.prior_0() * type1 + model.prior_1() * type2;
    Ok((
        next,
        StageError {
            error,
            type1,
            type2,
        },
        cutoffs,
    ))
}

/// Exact error series of a bounded-memory network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactSeries {
    pub stages: Vec<u64>,
    pub error: Vec<f64>,
    pub type1: Vec<f64>,
    pub type2: Vec<f64>,
    /// Stages whose window failed the all-zeros-smallest / all-ones-largest ordering.
    pub ordering_violations: usize,
}

impl ExactSeries {
    pub fn error_series(&self) -> crate::analysis::SeriesResult {
        crate::analysis::SeriesResult::new(self.stages.clone(), self.error.clone())
            .with_source("exact_dp")
    }

    pub fn error_at(&self, k: u64) -> Option<f64> {
        self.error.get(k.checked_sub(1)? as usize).copied()
    }
}

/// Per-stage MAP cutoff tables indexed by window state.
pub type CutoffTables = Vec<Vec<f64>>;

fn run_window_dp(
    config: &ExperimentConfig,
    horizon: u64,
    keep_cutoffs: bool,
) -> Result<(ExactSeries, CutoffTables)> {
    let bound = config
        .memory
        .bound()
        .ok_or_else(|| Error::Config("exact DP needs memory.family = bounded".into()))?;
    if bound > MAX_WINDOW {
        return Err(Error::Capacity {
            what: "memory.C",
            requested: u64::from(bound),
            limit: u64::from(MAX_WINDOW),
        });
    }
    let rule = config.rule();
    let mut dist = WindowDistribution::initial(config.channel.alphabet());
    let n = horizon as usize;
    let mut series = ExactSeries {
        stages: (1..=horizon).collect(),
        error: Vec::with_capacity(n),
        type1: Vec::with_capacity(n),
        type2: Vec::with_capacity(n),
        ordering_violations: 0,
    };
    let mut tables = Vec::new();
    for k in 1..=horizon {
        if !dist.extremes_ordered() {
            series.ordering_violations += 1;
        }
        let depth = config.memory.backward_search_depth(k);
        let (next, stage, cutoffs) = evolve_window(
            &dist,
            k,
            bound,
            depth,
            &config.model,
            &config.channel,
            &rule,
        )?;
        series.error.push(stage.error);
        series.type1.push(stage.type1);
        series.type2.push(stage.type2);
        if keep_cutoffs {
            tables.push(cutoffs);
        }
        dist = next;
    }
    Ok((series, tables))
}

/// Exact `P_e^k` for `k = 1..=horizon` under bounded memory.
pub fn exact_error_series(config: &ExperimentConfig, horizon: u64) -> Result<ExactSeries> {
    Ok(run_window_dp(config, horizon, false)?.0)
}

/// Exact series together with the per-stage cutoff tables the nodes use.
pub fn exact_error_series_with_cutoffs(
    config: &ExperimentConfig,
    horizon: u64,
) -> Result<(ExactSeries, CutoffTables)> {
    run_window_dp(config, horizon, true)
}

/// Joint probabilities `(P0(h), P1(h))` of every corrupted history `h` of
/// each length `1..=k_max` under full memory, built stage by stage.
fn enumerate_histories(
    flips: &FlipSchedule,
    model: &BeliefModel,
    rule: &ThresholdRule,
    k_max: u32,
    mut visit: impl FnMut(u32, &[(f64, f64)], &[(f64, f64)]),
) -> Result<()> {
    if k_max > MAX_ENUMERATION {
        return Err(Error::Capacity {
            what: "k_max",
            requested: u64::from(k_max),
            limit: u64::from(MAX_ENUMERATION),
        });
    }
    let mut level = vec![(1.0f64, 1.0f64)];
    for k in 1..=k_max {
        let q = flips.flip_prob(u64::from(k));
        let mut children = Vec::with_capacity(level.len() * 2);
        for &(p0, p1) in &level {
            let cutoff = rule.cutoff(p1 / p0);
            let (u0, u1) = decide_one_probs(cutoff, model);
            let one = (q + (1.0 - 2.0 * q) * u0, q + (1.0 - 2.0 * q) * u1);
            children.push((p0 * (1.0 - one.0), p1 * (1.0 - one.1)));
            children.push((p0 * one.0, p1 * one.1));
        }
        visit(k, &level, &children);
        level = children;
    }
    Ok(())
}

/// Largest `|sum_v P0(d_hat = v | h) L(h, v) - L(h)|` over all histories `h`
/// of length `0..k_max` for the public likelihood ratio `L = P1 / P0`.
pub fn martingale_check(flips: &FlipSchedule, model: &BeliefModel, k_max: u32) -> Result<f64> {
    Ok(martingale_deviations(flips, model, k_max)?
        .into_iter()
        .fold(0.0, f64::max))
}

/// Per-stage version of [`martingale_check`]: entry `k - 1` is the largest
/// deviation over histories of length `k - 1`.
pub fn martingale_deviations(
    flips: &FlipSchedule,
    model: &BeliefModel,
    k_max: u32,
) -> Result<Vec<f64>> {
    let rule = ThresholdRule::map(model);
    let mut out = Vec::with_capacity(k_max as usize);
    enumerate_histories(flips, model, &rule, k_max, |_, parents, children| {
        let mut worst = 0.0f64;
        for (i, &(p0, p1)) in parents.iter().enumerate() {
            let lk = p1 / p0;
            let expected: f64 = children[2 * i..2 * i + 2]
                .iter()
                .map(|&(c0, c1)| (c0 / p0) * (c1 / c0))
                .sum();
            worst = worst.max((expected - lk).abs());
        }
        out.push(worst);
    })?;
    Ok(out)
}

/// `P0(L_k > t)` for `k = 1..=k_max` by exhaustive enumeration.
pub fn likelihood_exceedance(
    flips: &FlipSchedule,
    model: &BeliefModel,
    k_max: u32,
    t: f64,
) -> Result<Vec<f64>> {
    let rule = ThresholdRule::map(model);
    let mut out = Vec::with_capacity(k_max as usize);
    enumerate_histories(flips, model, &rule, k_max, |_, _, children| {
        out.push(
            children
                .iter()
                .filter(|&&(c0, c1)| c1 / c0 > t)
                .map(|&(c0, _)| c0)
                .sum(),
        );
    })?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::ErasureSchedule;
    use crate::topology::MemorySchedule;
    use approx::assert_abs_diff_eq;

    fn flip_config(q: f64, c: u32) -> ExperimentConfig {
        ExperimentConfig::new(
            BeliefModel::uniform(),
            Channel::Flip(FlipSchedule::constant(q).unwrap()),
            MemorySchedule::bounded(c).unwrap(),
        )
    }

    fn erasure_config(level: f64, c: u32) -> ExperimentConfig {
        ExperimentConfig::new(
            BeliefModel::uniform(),
            Channel::Erasure(ErasureSchedule::constant(level).unwrap()),
            MemorySchedule::bounded(c).unwrap(),
        )
    }

    /// Brute-force oracle: enumerate every corrupted history of length k - 1,
    /// let each node use the exact window MAP cutoff, and sum.
    fn brute_force_error(config: &ExperimentConfig, horizon: u64) -> Vec<f64> {
        let c = config.memory.bound().unwrap() as usize;
        let a = config.channel.alphabet();
        let rule = config.rule();
        // histories: (symbols, P0, P1)
        let mut histories: Vec<(Vec<usize>, f64, f64)> = vec![(vec![], 1.0, 1.0)];
        let mut errors = Vec::new();
        for k in 1..=horizon {
            // Window marginals from the full histories.
            let window = |h: &Vec<usize>| h.iter().rev().take(c).copied().collect::<Vec<_>>();
            let mut table: std::collections::HashMap<Vec<usize>, (f64, f64)> = Default::default();
            for (h, p0, p1) in &histories {
                let e = table.entry(window(h)).or_insert((0.0, 0.0));
                e.0 += p0;
                e.1 += p1;
            }
            let mut next = Vec::new();
            let (mut t1, mut t2) = (0.0, 0.0);
            for (h, p0, p1) in &histories {
                let (w0, w1) = table[&window(h)];
                let lr = if w0 == 0.0 && w1 == 0.0 {
                    1.0
                } else if w0 == 0.0 {
                    f64::INFINITY
                } else {
                    w1 / w0
                };
                let cut = rule.cutoff(lr);
                let u0 = config
                    .model
                    .survival(crate::belief::Hypothesis::H0, cut.clamp(0.0, 1.0))
                    .unwrap();
                let u1 = config
                    .model
                    .survival(crate::belief::Hypothesis::H1, cut.clamp(0.0, 1.0))
                    .unwrap();
                t1 += p0 * u0;
                t2 += p1 * (1.0 - u1);
                let e0 = config.channel.symbol_probs(k, 0, 0);
                let e1 = config.channel.symbol_probs(k, 0, 1);
                for sym in 0..a {
                    let q0 = u0 * e1[sym] + (1.0 - u0) * e0[sym];
                    let q1 = u1 * e1[sym] + (1.0 - u1) * e0[sym];
                    if q0 + q1 > 0.0 {
                        let mut nh = h.clone();
                        nh.push(sym);
                        next.push((nh, p0 * q0, p1 * q1));
                    }
                }
            }
            errors.push(0.5 * t1 + 0.5 * t2);
            histories = next;
        }
        errors
    }

    #[test]
    fn matches_brute_force_enumeration() {
        for config in [
            flip_config(0.2, 1),
            flip_config(0.1, 2),
            flip_config(0.3, 3),
            erasure_config(0.3, 2),
            erasure_config(0.6, 1),
        ] {
            let dp = exact_error_series(&config, 9).unwrap();
            let brute = brute_force_error(&config, 9);
            for (k, (a, b)) in dp.error.iter().zip(&brute).enumerate() {
                assert_abs_diff_eq!(*a, *b, epsilon = 1e-13);
                let _ = k;
            }
        }
    }

    #[test]
    fn first_stage_is_single_signal_error() {
        for config in [
            flip_config(0.2, 1),
            erasure_config(0.3, 2),
            flip_config(0.0, 4),
        ] {
            let s = exact_error_series(&config, 1).unwrap();
            assert_abs_diff_eq!(s.error[0], 0.25, epsilon = 1e-15);
        }
    }

    #[test]
    fn uninformative_channel_keeps_single_signal_error() {
        let s = exact_error_series(&flip_config(0.5, 1), 200).unwrap();
        for e in s.error {
            assert_abs_diff_eq!(e, 0.25, epsilon = 1e-14);
        }
    }

    #[test]
    fn window_masses_stay_normalized() {
        let config = erasure_config(0.3, 3);
        let rule = config.rule();
        let mut dist = WindowDistribution::initial(3);
        for k in 1..50 {
            let (next, _, _) =
                evolve_window(&dist, k, 3, 0, &config.model, &config.channel, &rule).unwrap();
            for h in 0..2 {
                assert_abs_diff_eq!(next.mass(h).iter().sum::<f64>(), 1.0, epsilon = 1e-12);
                assert!(next.mass(h).iter().all(|&m| m >= 0.0));
            }
            dist = next;
        }
        assert_eq!(dist.window_length(), 3);
        assert_eq!(dist.states(), 27);
    }

    #[test]
    fn alphabet_mismatch_is_rejected() {
        let config = flip_config(0.2, 1);
        let rule = config.rule();
        let dist = WindowDistribution::initial(3);
        assert!(matches!(
            evolve_window(&dist, 1, 1, 0, &config.model, &config.channel, &rule),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn capacity_and_family_errors() {
        assert!(matches!(
            exact_error_series(&flip_config(0.2, 13), 10),
            Err(Error::Capacity { limit: 12, .. })
        ));
        let mut full = flip_config(0.2, 1);
        full.memory = MemorySchedule::Full;
        assert!(matches!(
            exact_error_series(&full, 10),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn bounded_flip_has_error_floor() {
        let s = exact_error_series(&flip_config(0.2, 1), 2000).unwrap();
        let tail = (s.error_at(2000).unwrap() - s.error_at(1000).unwrap()).abs();
        assert!(tail < 1e-6);
        assert!(s.error_at(2000).unwrap() > 0.0);
        // Floor bound q^C from the no-learning argument.
        assert!(s.error_at(2000).unwrap() > 0.2f64.powi(1) * 0.01);
    }

    #[test]
    fn bounded_erasure_has_error_floor() {
        let s = exact_error_series(&erasure_config(0.3, 2), 2000).unwrap();
        let last = s.error_at(2000).unwrap();
        assert!(last > 0.005);
        assert!((last - s.error_at(1000).unwrap()).abs() < 1e-6);
    }

    #[test]
    fn noiseless_tandem_is_non_increasing() {
        let s = exact_error_series(&flip_config(0.0, 1), 500).unwrap();
        for w in s.error.windows(2) {
            assert!(w[1] <= w[0] + 1e-15);
        }
    }

    #[test]
    fn martingale_examples() {
        let m = BeliefModel::uniform();
        let dev = martingale_check(&FlipSchedule::constant(0.25).unwrap(), &m, 1).unwrap();
        assert!(dev < 1e-15);
        let dev = martingale_check(&FlipSchedule::constant(0.5).unwrap(), &m, 10).unwrap();
        assert_eq!(dev, 0.0);
        let dev = martingale_check(&FlipSchedule::constant(0.25).unwrap(), &m, 12).unwrap();
        assert!(dev < 1e-10);
        assert!(matches!(
            martingale_check(&FlipSchedule::constant(0.25).unwrap(), &m, 15),
            Err(Error::Capacity { .. })
        ));
    }

    #[test]
    fn uninformative_channel_keeps_ratio_at_one() {
        let m = BeliefModel::uniform();
        let flips = FlipSchedule::constant(0.5).unwrap();
        let above = likelihood_exceedance(&flips, &m, 8, 1.0 + 1e-12).unwrap();
        let below = likelihood_exceedance(&flips, &m, 8, 1.0 - 1e-12).unwrap();
        assert!(above.iter().all(|&p| p == 0.0));
        assert!(below.iter().all(|&p| (p - 1.0).abs() < 1e-12));
    }

    #[test]
    fn exceedance_mass_trends_down() {
        let m = BeliefModel::uniform();
        let flips = FlipSchedule::constant(0.25).unwrap();
        for t in [0.5, 1.0, 2.0] {
            let mass = likelihood_exceedance(&flips, &m, 14, t).unwrap();
            // Early stages oscillate with parity; compare stages 4..=7 with 11..=14.
            let first_half: f64 = mass[3..7].iter().sum::<f64>() / 4.0;
            let second_half: f64 = mass[10..].iter().sum::<f64>() / 4.0;
            assert!(second_half < first_half, "t={t}: {mass:?}");
        }
    }
}
