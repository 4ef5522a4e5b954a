//! Trial-by-trial simulation of the network.
//!
//! Every trial draws from its own ChaCha stream selected by
//! `(seed, trial_index, hypothesis, pass)`, and all aggregation is done on
//! integer counts, so results do not depend on how trials are scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{stage_grid, SeriesResult};
use crate::belief::Hypothesis;
use crate::channels::{Channel, ErasureFamily, FlipSchedule, Symbol};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::exact_dp::{exact_error_series_with_cutoffs, CutoffTables};
use crate::strategy::{decide, tandem_posterior, PublicBeliefState, ThresholdRule};
use crate::topology::MemorySchedule;

/// Largest `horizon * alphabet^C` cutoff table a bounded-memory simulation builds.
pub const MAX_TABLE_ENTRIES: u64 = 1 << 24;

/// z-value of the two-sided 95% normal interval.
pub const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecMode {
    Sequential,
    /// Uses rayon when the `parallel` feature is enabled; sequential otherwise.
    Parallel,
}

impl Default for ExecMode {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            ExecMode::Parallel
        } else {
            ExecMode::Sequential
        }
    }
}

#[cfg_attr(not(feature = "parallel"), allow(unused_variables))]
fn map_reduce<T, F, R>(
    mode: ExecMode,
    n: u64,
    identity: impl Fn() -> T + Sync + Send,
    fold: F,
    reduce: R,
) -> T
where
    T: Send,
    F: Fn(T, u64) -> T + Sync + Send,
    R: Fn(T, T) -> T + Sync + Send,
{
    match mode {
        #[cfg(feature = "parallel")]
        ExecMode::Parallel => {
            use rayon::prelude::*;
            (0..n)
                .into_par_iter()
                .fold(&identity, &fold)
                .reduce(&identity, &reduce)
        }
        _ => (0..n).fold(identity(), fold),
    }
}

fn for_each_mut<T: Send>(mode: ExecMode, items: &mut [T], f: impl Fn(&mut T) + Sync + Send) {
    match mode {
        #[cfg(feature = "parallel")]
        ExecMode::Parallel => {
            use rayon::prelude::*;
            items.par_iter_mut().for_each(f);
        }
        _ => items.iter_mut().for_each(f),
    }
}

/// Independent stream for one trial of one pass.
pub fn trial_rng(seed: u64, trial_index: u64, hypothesis: Hypothesis, pass: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((trial_index << 2) | (pass << 1) | hypothesis.index() as u64);
    rng
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub hypothesis: Hypothesis,
    pub decisions: Vec<u8>,
    /// Last stage whose decision differs from the truth, 0 if none.
    pub last_error_index: u64,
    pub clamp_count: u32,
}

/// Summary of a trial without the decision vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrialOutcome {
    pub last_error_index: u64,
    pub clamp_count: u32,
}

#[derive(Debug, Clone)]
enum Plan {
    /// Full memory over a BSC: track the exact public belief.
    PublicBelief(FlipSchedule),
    /// Bounded memory: exact per-window MAP cutoffs from the DP.
    Window {
        bound: usize,
        alphabet: usize,
        tables: CutoffTables,
    },
    /// Unbounded memory over an erasure channel: use the most recent
    /// unerased decision in the window. `cutoffs[j - 1][v]` is the cutoff
    /// after reading symbol `v` from node `j`.
    NearestUnerased {
        cutoffs: Vec<[f64; 2]>,
        no_evidence: f64,
    },
}

/// Configuration with its strategy tables prepared once.
#[derive(Debug, Clone)]
pub struct Simulator {
    config: ExperimentConfig,
    rule: ThresholdRule,
    depths: Vec<u64>,
    plan: Plan,
}

impl Simulator {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        Self::with_mode(config, ExecMode::default())
    }

    /// As [`new`](Self::new); `mode` controls the calibration pass.
    pub fn with_mode(config: &ExperimentConfig, mode: ExecMode) -> Result<Self> {
        config.validate()?;
        let horizon = config.horizon;
        let depths = match &config.channel {
            Channel::Erasure(s) if matches!(s.family(), ErasureFamily::Theorem4 { .. }) => (1
                ..=horizon)
                .map(|k| config.memory.backward_search_depth(k))
                .collect(),
            _ => Vec::new(),
        };
        let rule = config.rule();
        let mut sim = Self {
            config: config.clone(),
            rule,
            depths,
            plan: Plan::NearestUnerased {
                cutoffs: Vec::new(),
                no_evidence: rule.cutoff(1.0),
            },
        };
        sim.plan = match (&config.channel, config.memory) {
            (_, MemorySchedule::Bounded { c }) => {
                let alphabet = config.channel.alphabet();
                let entries = (alphabet as u64).saturating_pow(c).saturating_mul(horizon);
                if entries > MAX_TABLE_ENTRIES {
                    return Err(Error::Capacity {
                        what: "horizon * alphabet^C",
                        requested: entries,
                        limit: MAX_TABLE_ENTRIES,
                    });
                }
                let (_, tables) = exact_error_series_with_cutoffs(config, horizon)?;
                Plan::Window {
                    bound: c as usize,
                    alphabet,
                    tables,
                }
            }
            (Channel::Flip(flips), MemorySchedule::Full) => Plan::PublicBelief(flips.clone()),
            (Channel::Erasure(_), _) => sim.calibrate(mode)?,
            (Channel::Flip(_), _) => unreachable!("rejected by validate"),
        };
        Ok(sim)
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    fn depth(&self, k: u64) -> u64 {
        self.depths.get((k - 1) as usize).copied().unwrap_or(0)
    }

    /// Cutoffs after reading 0 or 1 from a sender with marginals `(P0(d = 1), P1(d = 1))`.
    fn cutoff_row(&self, marginals: (f64, f64)) -> Result<[f64; 2]> {
        let prior = self.config.model.prior_1();
        Ok([
            self.rule
                .cutoff_from_belief(tandem_posterior(Symbol::Zero, marginals, prior)?),
            self.rule
                .cutoff_from_belief(tandem_posterior(Symbol::One, marginals, prior)?),
        ])
    }

    /// Stage-wise calibration of the sender marginals `P_j(d_k = 1)`.
    ///
    /// All calibration trials advance together so that node `k` can use the
    /// frozen marginals of nodes `< k`. Counts are smoothed by one half to
    /// keep every observed symbol possible under both hypotheses.
    fn calibrate(&self, mode: ExecMode) -> Result<Plan> {
        struct Cal {
            hypothesis: Hypothesis,
            rng: ChaCha8Rng,
            last: Option<(u64, u8)>,
            decision: u8,
        }
        let n = self.config.calibration_trials;
        let mut trials: Vec<Cal> = (0..n)
            .flat_map(|i| {
                Hypothesis::BOTH.map(|h| Cal {
                    hypothesis: h,
                    rng: trial_rng(self.config.seed, i, h, 1),
                    last: None,
                    decision: 0,
                })
            })
            .collect();
        let mut cutoffs: Vec<[f64; 2]> = Vec::with_capacity(self.config.horizon as usize);
        let no_evidence = self.rule.cutoff(1.0);
        for k in 1..=self.config.horizon {
            let oldest = k - self.config.memory.memory_size(k);
            let depth = self.depth(k);
            let (model, channel, table) = (&self.config.model, &self.config.channel, &cutoffs);
            for_each_mut(mode, &mut trials, |t| {
                let cutoff = match t.last {
                    Some((j, v)) if j >= oldest => table[(j - 1) as usize][v as usize],
                    _ => no_evidence,
                };
                let d = decide(
                    model.sample_private_belief(t.hypothesis, &mut t.rng),
                    cutoff,
                );
                t.decision = d;
                if let Some(v) = channel.transmit(k, depth, d, &mut t.rng).bit() {
                    t.last = Some((k, v));
                }
            });
            let mut ones = [0u64; 2];
            for t in &trials {
                ones[t.hypothesis.index()] += u64::from(t.decision);
            }
            let smooth = |c: u64| (c as f64 + 0.5) / (n as f64 + 1.0);
            cutoffs.push(self.cutoff_row((smooth(ones[0]), smooth(ones[1])))?);
        }
        Ok(Plan::NearestUnerased {
            cutoffs,
            no_evidence,
        })
    }

    /// Simulate one trial, reporting each decision to `visit(k, d_k)`.
    pub fn simulate(
        &self,
        trial_index: u64,
        hypothesis: Hypothesis,
        mut visit: impl FnMut(u64, u8),
    ) -> TrialOutcome {
        let mut rng = trial_rng(self.config.seed, trial_index, hypothesis, 0);
        let model = &self.config.model;
        let channel = &self.config.channel;
        let truth = hypothesis.bit();
        let mut last_error_index = 0;
        let mut clamp_count = 0;
        let mut record = |k: u64, d: u8| {
            if d != truth {
                last_error_index = k;
            }
            visit(k, d);
        };
        match &self.plan {
            Plan::PublicBelief(flips) => {
                let mut state = PublicBeliefState::new(model);
                for k in 1..=self.config.horizon {
                    let d = decide(
                        model.sample_private_belief(hypothesis, &mut rng),
                        state.cutoff(&self.rule),
                    );
                    record(k, d);
                    let observed = channel
                        .transmit(k, 0, d, &mut rng)
                        .bit()
                        .expect("BSC never erases");
                    state.observe(flips.flip_prob(k), observed, model, &self.rule);
                }
                clamp_count = state.clamp_events;
            }
            Plan::Window {
                bound,
                alphabet,
                tables,
            } => {
                let mut state = 0usize;
                for k in 1..=self.config.horizon {
                    let cutoff = tables[(k - 1) as usize][state];
                    let d = decide(model.sample_private_belief(hypothesis, &mut rng), cutoff);
                    record(k, d);
                    let sym = channel.transmit(k, self.depth(k), d, &mut rng).index();
                    let next_len = (*bound).min(k as usize);
                    let keep = alphabet.pow(next_len as u32 - 1);
                    state = (state % keep) * alphabet + sym;
                }
            }
            Plan::NearestUnerased {
                cutoffs,
                no_evidence,
            } => {
                let mut last: Option<(u64, u8)> = None;
                for k in 1..=self.config.horizon {
                    let oldest = k - self.config.memory.memory_size(k);
                    let cutoff = match last {
                        Some((j, v)) if j >= oldest => cutoffs[(j - 1) as usize][v as usize],
                        _ => *no_evidence,
                    };
                    let d = decide(model.sample_private_belief(hypothesis, &mut rng), cutoff);
                    record(k, d);
                    if let Some(v) = channel.transmit(k, self.depth(k), d, &mut rng).bit() {
                        last = Some((k, v));
                    }
                }
            }
        }
        TrialOutcome {
            last_error_index,
            clamp_count,
        }
    }

    pub fn run_trial(&self, trial_index: u64, hypothesis: Hypothesis) -> TrialRecord {
        let mut decisions = Vec::with_capacity(self.config.horizon as usize);
        let outcome = self.simulate(trial_index, hypothesis, |_, d| decisions.push(d));
        TrialRecord {
            hypothesis,
            decisions,
            last_error_index: outcome.last_error_index,
            clamp_count: outcome.clamp_count,
        }
    }
}

/// One full trial; a pure function of `(config, trial_index, hypothesis)`.
pub fn run_trial(
    config: &ExperimentConfig,
    trial_index: u64,
    hypothesis: Hypothesis,
) -> Result<TrialRecord> {
    Ok(Simulator::new(config)?.run_trial(trial_index, hypothesis))
}

/// Monte Carlo estimate of the error series on a stage grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorEstimate {
    pub stages: Vec<u64>,
    /// `#{H0 trials with d_k = 1}` per grid stage.
    pub type1_counts: Vec<u64>,
    /// `#{H1 trials with d_k = 0}` per grid stage.
    pub type2_counts: Vec<u64>,
    pub trials: u64,
    pub prior_1: f64,
    pub clamp_events: u64,
}

impl ErrorEstimate {
    pub fn type1(&self) -> Vec<f64> {
        self.type1_counts
            .iter()
            .map(|&c| c as f64 / self.trials as f64)
            .collect()
    }

    pub fn type2(&self) -> Vec<f64> {
        self.type2_counts
            .iter()
            .map(|&c| c as f64 / self.trials as f64)
            .collect()
    }

    pub fn error(&self) -> Vec<f64> {
        let (p0, p1) = (1.0 - self.prior_1, self.prior_1);
        self.type1()
            .iter()
            .zip(self.type2())
            .map(|(a, b)| p0 * a + p1 * b)
            .collect()
    }

    /// Normal-approximation standard error of each `P_e` estimate.
    pub fn standard_error(&self) -> Vec<f64> {
        let n = self.trials as f64;
        let (p0, p1) = (1.0 - self.prior_1, self.prior_1);
        self.type1()
            .iter()
            .zip(self.type2())
            .map(|(a, b)| (p0 * p0 * a * (1.0 - a) / n + p1 * p1 * b * (1.0 - b) / n).sqrt())
            .collect()
    }

    /// 95% normal-approximation intervals `(low, high)`.
    pub fn confidence_intervals(&self) -> Vec<(f64, f64)> {
        self.error()
            .iter()
            .zip(self.standard_error())
            .map(|(e, s)| (e - Z95 * s, e + Z95 * s))
            .collect()
    }

    pub fn index_of(&self, stage: u64) -> Option<usize> {
        self.stages.binary_search(&stage).ok()
    }

    pub fn series(&self) -> SeriesResult {
        SeriesResult::new(self.stages.clone(), self.error()).with_source("montecarlo")
    }
}

/// Run `config.trials` trials per hypothesis and count errors on
/// [`stage_grid`]`(K, 100, 100)`.
pub fn estimate_error_series(config: &ExperimentConfig) -> Result<ErrorEstimate> {
    estimate_error_series_with(config, ExecMode::default())
}

pub fn estimate_error_series_with(
    config: &ExperimentConfig,
    mode: ExecMode,
) -> Result<ErrorEstimate> {
    let sim = Simulator::with_mode(config, mode)?;
    let stages = stage_grid(config.horizon, 100, 100);
    estimate_on_stages(&sim, stages, mode)
}

/// As [`estimate_error_series`] on an explicit increasing stage list.
pub fn estimate_on_stages(
    sim: &Simulator,
    stages: Vec<u64>,
    mode: ExecMode,
) -> Result<ErrorEstimate> {
    let config = sim.config();
    if stages.windows(2).any(|w| w[0] >= w[1]) || stages.last().is_some_and(|&k| k > config.horizon)
    {
        return Err(Error::Config(
            "stages must be increasing and within the horizon".into(),
        ));
    }
    // slot[k - 1] = position of stage k in the grid.
    let mut slot = vec![usize::MAX; config.horizon as usize];
    for (i, &k) in stages.iter().enumerate() {
        slot[(k - 1) as usize] = i;
    }
    let width = stages.len();
    let identity = || (vec![0u64; 2 * width], 0u64);
    let fold = |(mut counts, mut clamps): (Vec<u64>, u64), trial: u64| {
        for h in Hypothesis::BOTH {
            let offset = h.index() * width;
            let wrong = 1 - h.bit();
            let outcome = sim.simulate(trial, h, |k, d| {
                let i = slot[(k - 1) as usize];
                if i != usize::MAX && d == wrong {
                    counts[offset + i] += 1;
                }
            });
            clamps += u64::from(outcome.clamp_count);
        }
        (counts, clamps)
    };
    let reduce = |(mut a, ca): (Vec<u64>, u64), (b, cb): (Vec<u64>, u64)| {
        a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
        (a, ca + cb)
    };
    let (counts, clamp_events) = map_reduce(mode, config.trials, identity, fold, reduce);
    if clamp_events > 0 {
        log::info!("public belief hit its numerical floor or ceiling {clamp_events} times");
    }
    Ok(ErrorEstimate {
        stages,
        type1_counts: counts[..width].to_vec(),
        type2_counts: counts[width..].to_vec(),
        trials: config.trials,
        prior_1: config.model.prior_1(),
        clamp_events,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HerdingRow {
    pub hypothesis: Hypothesis,
    pub late_error_fraction: f64,
    pub q50: u64,
    pub q90: u64,
    pub q99: u64,
}

/// Nearest-rank percentile of a sorted slice.
fn percentile(sorted: &[u64], pct: u64) -> u64 {
    if sorted.is_empty() {
        return 0;
    }
    let rank = (pct as usize * sorted.len()).div_ceil(100).max(1);
    sorted[rank - 1]
}

/// Fraction of trials whose last error falls after `k0_fraction * K`, with
/// quantiles of the last-error index, for each hypothesis.
pub fn herding_stats(config: &ExperimentConfig, k0_fraction: f64) -> Result<[HerdingRow; 2]> {
    herding_stats_with(config, k0_fraction, ExecMode::default())
}

pub fn herding_stats_with(
    config: &ExperimentConfig,
    k0_fraction: f64,
    mode: ExecMode,
) -> Result<[HerdingRow; 2]> {
    if !(k0_fraction > 0.0 && k0_fraction < 1.0) {
        return Err(Error::Domain {
            what: "k0_fraction",
            value: k0_fraction,
            domain: "(0, 1)",
        });
    }
    let sim = Simulator::with_mode(config, mode)?;
    let cut = (k0_fraction * config.horizon as f64).ceil() as u64;
    let identity = || [Vec::new(), Vec::new()];
    let fold = |mut acc: [Vec<(u64, u64)>; 2], trial: u64| {
        for h in Hypothesis::BOTH {
            acc[h.index()].push((trial, sim.simulate(trial, h, |_, _| {}).last_error_index));
        }
        acc
    };
    let reduce = |mut a: [Vec<(u64, u64)>; 2], b: [Vec<(u64, u64)>; 2]| {
        for (x, y) in a.iter_mut().zip(b) {
            x.extend(y);
        }
        a
    };
    let per_hypothesis = map_reduce(mode, config.trials, identity, fold, reduce);
    Ok(Hypothesis::BOTH.map(|h| {
        let mut last: Vec<u64> = per_hypothesis[h.index()].iter().map(|&(_, l)| l).collect();
        last.sort_unstable();
        let late = last.iter().filter(|&&l| l > cut).count();
        HerdingRow {
            hypothesis: h,
            late_error_fraction: late as f64 / last.len() as f64,
            q50: percentile(&last, 50),
            q90: percentile(&last, 90),
            q99: percentile(&last, 99),
        }
    }))
}

/// Empirical frequency with which a length-`n` backward search completes:
/// `n` hops, each succeeding iff one of its `n` candidates is unerased.
pub fn estimate_chain_success(erasure_level: f64, n: u64, trials: u64, seed: u64) -> Result<f64> {
    estimate_chain_success_with(erasure_level, n, trials, seed, ExecMode::default())
}

pub fn estimate_chain_success_with(
    erasure_level: f64,
    n: u64,
    trials: u64,
    seed: u64,
    mode: ExecMode,
) -> Result<f64> {
    crate::error::check_unit("erasure level", erasure_level)?;
    if n == 0 || trials == 0 {
        return Err(Error::Config(
            "chain length and trials must be positive".into(),
        ));
    }
    let successes = map_reduce(
        mode,
        trials,
        || 0u64,
        |acc, trial| {
            use rand::Rng;
            let mut rng = trial_rng(seed, trial, Hypothesis::H0, 0);
            let complete = (0..n).all(|_| (0..n).any(|_| rng.random::<f64>() >= erasure_level));
            acc + u64::from(complete)
        },
        |a, b| a + b,
    );
    Ok(successes as f64 / trials as f64)
}
