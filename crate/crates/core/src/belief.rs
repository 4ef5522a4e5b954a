//! Private-belief model.
//!
//! A node's private belief `r = P(H1 | X)` (computed at equal priors) has
//! density `f1(r) = r * rho(r)` under H1 and `f0(r) = (1 - r) * rho(r)` under
//! H0, with the symmetric family
//!
//! ```text
//! rho(r) = Z * (r (1 - r))^beta,      Z = 1 / B(beta + 1, beta + 2)
//! ```
//!
//! so that `f0` is the Beta(beta+1, beta+2) density and `f1` the
//! Beta(beta+2, beta+1) density. `f1 / f0 = r / (1 - r)` everywhere, the
//! likelihood ratio is unbounded at both ends, and near `r = 1` the density
//! behaves like `gamma * (1 - r)^beta` with `gamma = Z`.

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{check_unit, Error, Result};

/// Largest integer exponent evaluated through the exact binomial expansion.
const MAX_POLY_BETA: f64 = 60.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Hypothesis {
    H0,
    H1,
}

impl Hypothesis {
    pub const BOTH: [Hypothesis; 2] = [Hypothesis::H0, Hypothesis::H1];

    pub fn index(self) -> usize {
        match self {
            Hypothesis::H0 => 0,
            Hypothesis::H1 => 1,
        }
    }

    /// The decision that is correct under this hypothesis.
    pub fn bit(self) -> u8 {
        self.index() as u8
    }
}

#[derive(Debug, Clone)]
pub struct BeliefModel {
    beta: f64,
    norm: f64,
    prior_1: f64,
    // Samplers for Beta(beta+1, beta+2) and Beta(beta+2, beta+1); unused at beta = 0.
    samplers: [Beta<f64>; 2],
}

impl PartialEq for BeliefModel {
    fn eq(&self, other: &Self) -> bool {
        self.beta == other.beta && self.prior_1 == other.prior_1
    }
}

impl Default for BeliefModel {
    fn default() -> Self {
        Self::new(0.0, 0.5).expect("default model parameters are valid")
    }
}

impl BeliefModel {
    pub fn new(beta: f64, prior_1: f64) -> Result<Self> {
        if !(beta.is_finite() && beta >= 0.0) {
            return Err(Error::Domain {
                what: "beta",
                value: beta,
                domain: "[0, inf)",
            });
        }
        if !(prior_1 > 0.0 && prior_1 < 1.0) {
            return Err(Error::Domain {
                what: "prior_1",
                value: prior_1,
                domain: "(0, 1)",
            });
        }
        let norm = inverse_beta_fn(beta + 1.0, beta + 2.0);
        let samplers = [
            Beta::new(beta + 1.0, beta + 2.0).map_err(|e| Error::Config(e.to_string()))?,
            Beta::new(beta + 2.0, beta + 1.0).map_err(|e| Error::Config(e.to_string()))?,
        ];
        Ok(Self {
            beta,
            norm,
            prior_1,
            samplers,
        })
    }

    /// Constant-density model (`beta = 0`) with equal priors.
    pub fn uniform() -> Self {
        Self::default()
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Normalization constant `Z`.
    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn prior_1(&self) -> f64 {
        self.prior_1
    }

    pub fn prior_0(&self) -> f64 {
        1.0 - self.prior_1
    }

    pub fn prior(&self, hypothesis: Hypothesis) -> f64 {
        match hypothesis {
            Hypothesis::H0 => self.prior_0(),
            Hypothesis::H1 => self.prior_1,
        }
    }

    /// `rho(r)`, the common factor of both densities.
    pub fn rho(&self, r: f64) -> f64 {
        self.norm * (r * (1.0 - r)).powf(self.beta)
    }

    pub fn density(&self, hypothesis: Hypothesis, r: f64) -> Result<f64> {
        let r = check_unit("r", r)?;
        Ok(match hypothesis {
            Hypothesis::H0 => (1.0 - r) * self.rho(r),
            Hypothesis::H1 => r * self.rho(r),
        })
    }

    /// `G_j(r) = P_j(private belief <= r)`.
    pub fn cdf(&self, hypothesis: Hypothesis, r: f64) -> Result<f64> {
        let r = check_unit("r", r)?;
        Ok(self.tails(hypothesis, r).0)
    }

    /// `1 - G_j(r)`, evaluated without cancellation so that tiny tails keep
    /// their relative precision.
    pub fn survival(&self, hypothesis: Hypothesis, r: f64) -> Result<f64> {
        let r = check_unit("r", r)?;
        Ok(self.tails(hypothesis, r).1)
    }

    /// Unchecked `(G_j(r), 1 - G_j(r))` for `r` already known to be in [0, 1].
    pub(crate) fn tails(&self, hypothesis: Hypothesis, r: f64) -> (f64, f64) {
        if r <= 0.0 {
            return (0.0, 1.0);
        }
        if r >= 1.0 {
            return (1.0, 0.0);
        }
        let (a, b) = match hypothesis {
            Hypothesis::H0 => (self.beta + 1.0, self.beta + 2.0),
            Hypothesis::H1 => (self.beta + 2.0, self.beta + 1.0),
        };
        if self.beta == 0.0 {
            let s = 1.0 - r;
            return match hypothesis {
                Hypothesis::H0 => (r * (1.0 + s), s * s),
                Hypothesis::H1 => (r * r, s * (1.0 + r)),
            };
        }
        if self.beta.fract() == 0.0 && self.beta <= MAX_POLY_BETA {
            binomial_tails(a as u32, b as u32, r)
        } else {
            // Evaluate the smaller tail directly; the other by symmetry of the
            // regularized incomplete Beta function.
            let lower = statrs::function::beta::beta_reg(a, b, r);
            let upper = statrs::function::beta::beta_reg(b, a, 1.0 - r);
            if lower < upper {
                (lower, 1.0 - lower)
            } else {
                (1.0 - upper, upper)
            }
        }
    }

    /// Draw a private belief under `hypothesis`.
    pub fn sample_private_belief<R: Rng + ?Sized>(
        &self,
        hypothesis: Hypothesis,
        rng: &mut R,
    ) -> f64 {
        if self.beta == 0.0 {
            // Inverse CDF: G0^{-1}(u) = 1 - sqrt(1 - u), G1^{-1}(u) = sqrt(u).
            let u: f64 = rng.random();
            return match hypothesis {
                Hypothesis::H0 => 1.0 - (1.0 - u).sqrt(),
                Hypothesis::H1 => u.sqrt(),
            };
        }
        self.samplers[hypothesis.index()].sample(rng)
    }

    /// Likelihood ratio `L_X` carried by a private belief formed under this
    /// model's priors. Returns `0` at `belief = 0` and `+inf` at `belief = 1`.
    pub fn private_likelihood_ratio(&self, belief: f64) -> Result<f64> {
        let belief = check_unit("belief", belief)?;
        if belief == 1.0 {
            return Ok(f64::INFINITY);
        }
        Ok(self.prior_0() / self.prior_1 * belief / (1.0 - belief))
    }

    /// `(beta, gamma)` with `rho(r) / (1 - r)^beta -> gamma` as `r -> 1`.
    pub fn tail_constants(&self) -> (f64, f64) {
        (self.beta, self.norm)
    }
}

/// `1 / B(a, b)`, exact for small integer arguments.
fn inverse_beta_fn(a: f64, b: f64) -> f64 {
    use statrs::function::gamma::{gamma, ln_gamma};
    if a.fract() == 0.0 && b.fract() == 0.0 && a + b <= 170.0 {
        // (a + b - 1)! / ((a - 1)! (b - 1)!) as a running product.
        let (small, large) = if a < b {
            (a as u32, b as u32)
        } else {
            (b as u32, a as u32)
        };
        let mut acc = f64::from(large);
        for i in 1..small {
            acc = acc * f64::from(large + i) / f64::from(i);
        }
        return acc;
    }
    if a + b < 170.0 {
        gamma(a + b) / (gamma(a) * gamma(b))
    } else {
        (ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b)).exp()
    }
}

/// `(I_x(a, b), 1 - I_x(a, b))` for integer `a, b >= 1` via the binomial
/// expansion `I_x(a, b) = sum_{j >= a} C(n, j) x^j (1 - x)^(n - j)`, `n = a + b - 1`.
fn binomial_tails(a: u32, b: u32, x: f64) -> (f64, f64) {
    let n = a + b - 1;
    let y = 1.0 - x;
    let mut lower = 0.0;
    let mut upper = 0.0;
    let mut binom = 1.0;
    for j in 0..=n {
        if j > 0 {
            binom = binom * f64::from(n - j + 1) / f64::from(j);
        }
        let term = binom * x.powi(j as i32) * y.powi((n - j) as i32);
        if j >= a {
            lower += term;
        } else {
            upper += term;
        }
    }
    (lower, upper)
}
