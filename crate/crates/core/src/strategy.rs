//! Likelihood-ratio decision rules and public-belief updates.

use serde::{Deserialize, Serialize};

use crate::belief::{BeliefModel, Hypothesis};
use crate::channels::Symbol;
use crate::error::{Error, Result};

/// Public beliefs are kept inside `[MIN_BELIEF, MAX_BELIEF]` so that floating
/// underflow never produces an absorbing 0 or 1.
pub const MIN_BELIEF: f64 = 1e-300;
pub const MAX_BELIEF: f64 = 1.0 - 1e-16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionMode {
    /// Threshold `pi0 / pi1`.
    #[default]
    Map,
    /// Threshold 1.
    Ml,
}

/// Likelihood-ratio test `L_X * L_D > t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRule {
    pub mode: DecisionMode,
    pub prior_ratio: f64,
}

impl ThresholdRule {
    pub fn new(mode: DecisionMode, model: &BeliefModel) -> Self {
        Self {
            mode,
            prior_ratio: model.prior_0() / model.prior_1(),
        }
    }

    pub fn map(model: &BeliefModel) -> Self {
        Self::new(DecisionMode::Map, model)
    }

    pub fn threshold(&self) -> f64 {
        match self.mode {
            DecisionMode::Map => self.prior_ratio,
            DecisionMode::Ml => 1.0,
        }
    }

    /// Cutoff on the (equal-prior) private belief `r`: decide 1 iff `r > cutoff`.
    ///
    /// The test `r / (1 - r) * L_D > t` becomes `r > kappa / (1 + kappa)` with
    /// `kappa = t / L_D`.
    pub fn cutoff(&self, public_likelihood: f64) -> f64 {
        if public_likelihood <= 0.0 {
            return 1.0;
        }
        if public_likelihood.is_infinite() {
            return 0.0;
        }
        let kappa = self.threshold() / public_likelihood;
        if kappa.is_infinite() {
            1.0
        } else {
            kappa / (1.0 + kappa)
        }
    }

    /// Cutoff expressed through the public belief `b = P(H1 | history)`.
    /// Under MAP this is exactly `1 - b`.
    pub fn cutoff_from_belief(&self, b: f64) -> f64 {
        match self.mode {
            DecisionMode::Map => 1.0 - b,
            DecisionMode::Ml => {
                let lr = self.prior_ratio * b / (1.0 - b);
                self.cutoff(lr)
            }
        }
    }
}

/// MAP cutoff at equal priors: `1 / (1 + L_D)`.
pub fn map_belief_cutoff(public_likelihood: f64) -> f64 {
    if public_likelihood.is_infinite() {
        return 0.0;
    }
    1.0 / (1.0 + public_likelihood.max(0.0))
}

/// 1 iff `private_belief > cutoff`; ties decide 0.
pub fn decide(private_belief: f64, cutoff: f64) -> u8 {
    u8::from(private_belief > cutoff)
}

/// `(P0(d = 0), P1(d = 0))` for a node holding public belief `b` under MAP,
/// i.e. `(G0(1 - b), G1(1 - b))`.
pub fn conditional_decision_probs(b: f64, model: &BeliefModel) -> (f64, f64) {
    let (s0, s1) = decide_one_probs(1.0 - b, model);
    (1.0 - s0, 1.0 - s1)
}

/// `(P0(d = 1), P1(d = 1))` at the given cutoff, computed from the upper
/// tails directly.
pub(crate) fn decide_one_probs(cutoff: f64, model: &BeliefModel) -> (f64, f64) {
    let c = cutoff.clamp(0.0, 1.0);
    (
        model.tails(Hypothesis::H0, c).1,
        model.tails(Hypothesis::H1, c).1,
    )
}

/// Public belief with its clamp counter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PublicBeliefState {
    pub belief: f64,
    pub stage: u64,
    pub clamp_events: u32,
}

impl PublicBeliefState {
    pub fn new(model: &BeliefModel) -> Self {
        Self {
            belief: model.prior_1(),
            stage: 0,
            clamp_events: 0,
        }
    }

    pub fn cutoff(&self, rule: &ThresholdRule) -> f64 {
        rule.cutoff_from_belief(self.belief)
    }

    /// Absorb the corrupted decision of node `stage + 1`, sent over a BSC
    /// with flip probability `q`.
    pub fn observe(&mut self, q: f64, observed: u8, model: &BeliefModel, rule: &ThresholdRule) {
        let (b, clamped) = update_public_belief_with(self.belief, q, observed, model, rule);
        self.belief = b;
        self.stage += 1;
        self.clamp_events += u32::from(clamped);
    }
}

/// Bayes update of the public belief after observing the corrupted decision
/// `observed` of a node that decided by MAP from public belief `b`.
pub fn update_public_belief(b: f64, q: f64, observed: u8, model: &BeliefModel) -> f64 {
    update_public_belief_with(b, q, observed, model, &ThresholdRule::map(model)).0
}

/// As [`update_public_belief`] for any threshold rule; also reports whether
/// the result hit the numerical floor or ceiling.
pub fn update_public_belief_with(
    b: f64,
    q: f64,
    observed: u8,
    model: &BeliefModel,
    rule: &ThresholdRule,
) -> (f64, bool) {
    let (up0, up1) = decide_one_probs(rule.cutoff_from_belief(b), model);
    // P_j(d_hat = v) = q + (1 - 2q) P_j(d = v), written so that small tails
    // are never formed by cancellation.
    let keep = 1.0 - 2.0 * q;
    let (w0, w1) = if observed == 0 {
        ((1.0 - q) - keep * up0, (1.0 - q) - keep * up1)
    } else {
        (q + keep * up0, q + keep * up1)
    };
    let num = w1 * b;
    let den = num + w0 * (1.0 - b);
    let next = if den > 0.0 { num / den } else { b };
    clamp_belief(next)
}

fn clamp_belief(b: f64) -> (f64, bool) {
    if b < MIN_BELIEF {
        (MIN_BELIEF, true)
    } else if b > MAX_BELIEF {
        (MAX_BELIEF, true)
    } else {
        (b, false)
    }
}

/// Posterior after reading one symbol from a sender whose decision marginals
/// are `(P0(d = 1), P1(d = 1))`. Erasures leave the prior untouched.
pub fn tandem_posterior(
    observed: Symbol,
    sender_marginals: (f64, f64),
    prior_belief: f64,
) -> Result<f64> {
    let (m0, m1) = sender_marginals;
    let (p0, p1) = match observed {
        Symbol::Erased => return Ok(prior_belief),
        Symbol::One => (m0, m1),
        Symbol::Zero => (1.0 - m0, 1.0 - m1),
    };
    let num = p1 * prior_belief;
    let den = num + p0 * (1.0 - prior_belief);
    if den <= 0.0 {
        return Err(Error::DegenerateEvidence {
            symbol: observed.index() as u8,
        });
    }
    Ok(num / den)
}
