//! Broadcast channels: binary erasure and binary symmetric (flipping).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Output alphabet of a broadcast channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Symbol {
    Zero,
    One,
    Erased,
}

impl Symbol {
    pub fn from_bit(bit: u8) -> Self {
        if bit == 0 {
            Symbol::Zero
        } else {
            Symbol::One
        }
    }

    pub fn index(self) -> usize {
        match self {
            Symbol::Zero => 0,
            Symbol::One => 1,
            Symbol::Erased => 2,
        }
    }

    pub fn from_index(i: usize) -> Self {
        match i {
            0 => Symbol::Zero,
            1 => Symbol::One,
            _ => Symbol::Erased,
        }
    }

    pub fn bit(self) -> Option<u8> {
        match self {
            Symbol::Zero => Some(0),
            Symbol::One => Some(1),
            Symbol::Erased => None,
        }
    }
}

/// `Q = (1 - 2q) / (1 - q)`: 1 for a noiseless channel, 0 at `q = 1/2`.
pub fn informativeness(q: f64) -> Result<f64> {
    if !(0.0..=0.5).contains(&q) {
        return Err(Error::Domain {
            what: "q",
            value: q,
            domain: "[0, 1/2]",
        });
    }
    Ok((1.0 - 2.0 * q) / (1.0 - q))
}

/// Inverse of [`informativeness`]: `q = (1 - Q) / (2 - Q)`, clamped to [0, 1/2].
pub fn flip_for_informativeness(target: f64) -> f64 {
    let target = target.clamp(0.0, 1.0);
    ((1.0 - target) / (2.0 - target)).clamp(0.0, 0.5)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum FlipFamily {
    Constant {
        q: f64,
    },
    /// `Q_k = scale * k^-(1 - p)`.
    Power {
        p: f64,
    },
    /// `Q_k = scale / k`.
    Reciprocal,
    /// `Q_k = scale / (k (ln k)^p)`.
    LogPower {
        p: f64,
    },
    /// `Q_k = scale / (k ln k)`.
    Log,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlipSchedule {
    family: FlipFamily,
    scale: f64,
    /// Original level when a constant `q > 1/2` was folded onto `1 - q`.
    folded_from: Option<f64>,
}

impl FlipSchedule {
    pub fn constant(q: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&q) {
            return Err(Error::Domain {
                what: "q",
                value: q,
                domain: "[0, 1]",
            });
        }
        let (q, folded_from) = if q > 0.5 {
            log::warn!(
                "flip probability {q} folded to {} by channel symmetry",
                1.0 - q
            );
            (1.0 - q, Some(q))
        } else {
            (q, None)
        };
        Ok(Self {
            family: FlipFamily::Constant { q },
            scale: 1.0,
            folded_from,
        })
    }

    /// Schedule defined through its informativeness sequence `Q_k`.
    pub fn from_informativeness(family: FlipFamily, scale: f64) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::Domain {
                what: "scale",
                value: scale,
                domain: "(0, inf)",
            });
        }
        match family {
            FlipFamily::Constant { q } => {
                let mut s = Self::constant(q)?;
                s.scale = scale;
                return Ok(s);
            }
            FlipFamily::Power { p } if !(p > 0.0 && p <= 1.0) => {
                return Err(Error::Domain {
                    what: "p",
                    value: p,
                    domain: "(0, 1]",
                })
            }
            FlipFamily::LogPower { p } if !(p.is_finite() && p > 0.0) => {
                return Err(Error::Domain {
                    what: "p",
                    value: p,
                    domain: "(0, inf)",
                })
            }
            _ => {}
        }
        Ok(Self {
            family,
            scale,
            folded_from: None,
        })
    }

    pub fn family(&self) -> FlipFamily {
        self.family
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn folded_from(&self) -> Option<f64> {
        self.folded_from
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.family, FlipFamily::Constant { .. })
    }

    /// Target informativeness `Q_k` for the non-constant families, before
    /// clamping to [0, 1].
    fn raw_informativeness(&self, k: u64) -> f64 {
        let kf = k.max(1) as f64;
        // log families start at k = 2; the first stage reuses the second.
        let kl = k.max(2) as f64;
        match self.family {
            FlipFamily::Constant { q } => (1.0 - 2.0 * q) / (1.0 - q),
            FlipFamily::Power { p } => self.scale * kf.powf(-(1.0 - p)),
            FlipFamily::Reciprocal => self.scale / kf,
            FlipFamily::LogPower { p } => self.scale / (kl * kl.ln().powf(p)),
            FlipFamily::Log => self.scale / (kl * kl.ln()),
        }
    }

    /// `Q_k` actually realized by [`flip_prob`](Self::flip_prob).
    pub fn informativeness_at(&self, k: u64) -> f64 {
        self.raw_informativeness(k).clamp(0.0, 1.0)
    }

    /// `q_k`, always in [0, 1/2].
    pub fn flip_prob(&self, k: u64) -> f64 {
        match self.family {
            FlipFamily::Constant { q } => q,
            _ => flip_for_informativeness(self.raw_informativeness(k)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ErasureFamily {
    /// Fixed level, optionally different for transmitted 0 and 1.
    Constant { level0: f64, level1: f64 },
    /// `(c n)^(-eps / n)` at backward-search depth `n`; tends to 1.
    Theorem4 { c: f64, eps: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErasureSchedule {
    family: ErasureFamily,
}

impl ErasureSchedule {
    pub fn constant(level: f64) -> Result<Self> {
        Self::per_input(level, level)
    }

    pub fn per_input(level0: f64, level1: f64) -> Result<Self> {
        for level in [level0, level1] {
            if !(0.0..=1.0).contains(&level) {
                return Err(Error::Domain {
                    what: "erasure level",
                    value: level,
                    domain: "[0, 1]",
                });
            }
        }
        Ok(Self {
            family: ErasureFamily::Constant { level0, level1 },
        })
    }

    pub fn theorem4(c: f64, eps: f64) -> Result<Self> {
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::Domain {
                what: "c",
                value: c,
                domain: "(0, inf)",
            });
        }
        if !(eps.is_finite() && eps > 1.0) {
            return Err(Error::Domain {
                what: "eps",
                value: eps,
                domain: "(1, inf)",
            });
        }
        Ok(Self {
            family: ErasureFamily::Theorem4 { c, eps },
        })
    }

    pub fn family(&self) -> ErasureFamily {
        self.family
    }

    pub fn is_symmetric(&self) -> bool {
        match self.family {
            ErasureFamily::Constant { level0, level1 } => level0 == level1,
            ErasureFamily::Theorem4 { .. } => true,
        }
    }

    /// Erasure probability for a transmitted `bit` by a node whose
    /// backward-search depth is `depth` (only the theorem-4 family uses it).
    pub fn level(&self, bit: u8, depth: u64) -> f64 {
        match self.family {
            ErasureFamily::Constant { level0, level1 } => {
                if bit == 0 {
                    level0
                } else {
                    level1
                }
            }
            ErasureFamily::Theorem4 { c, eps } => theorem4_level(c, eps, depth),
        }
    }
}

/// `(c n)^(-eps / n)` clamped to [0, 1]; depth 0 erases everything.
pub fn theorem4_level(c: f64, eps: f64, depth: u64) -> f64 {
    if depth == 0 {
        return 1.0;
    }
    let n = depth as f64;
    (c * n).powf(-eps / n).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Channel {
    Erasure(ErasureSchedule),
    Flip(FlipSchedule),
}

impl Channel {
    /// Size of the output alphabet: 2 for flipping, 3 for erasure.
    pub fn alphabet(&self) -> usize {
        match self {
            Channel::Erasure(_) => 3,
            Channel::Flip(_) => 2,
        }
    }

    /// Output distribution `[P(0), P(1), P(e)]` for the decision of node `k`.
    pub fn symbol_probs(&self, k: u64, depth: u64, bit: u8) -> [f64; 3] {
        match self {
            Channel::Flip(s) => {
                let q = s.flip_prob(k);
                if bit == 0 {
                    [1.0 - q, q, 0.0]
                } else {
                    [q, 1.0 - q, 0.0]
                }
            }
            Channel::Erasure(s) => {
                let level = s.level(bit, depth);
                if bit == 0 {
                    [1.0 - level, 0.0, level]
                } else {
                    [0.0, 1.0 - level, level]
                }
            }
        }
    }

    /// Pass node `k`'s decision through the channel.
    pub fn transmit<R: Rng + ?Sized>(&self, k: u64, depth: u64, bit: u8, rng: &mut R) -> Symbol {
        let u: f64 = rng.random();
        match self {
            Channel::Flip(s) => {
                if u < s.flip_prob(k) {
                    Symbol::from_bit(1 - bit)
                } else {
                    Symbol::from_bit(bit)
                }
            }
            Channel::Erasure(s) => {
                if u < s.level(bit, depth) {
                    Symbol::Erased
                } else {
                    Symbol::from_bit(bit)
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn informativeness_examples() {
        assert_eq!(informativeness(0.0).unwrap(), 1.0);
        assert_eq!(informativeness(0.5).unwrap(), 0.0);
        assert_abs_diff_eq!(informativeness(0.25).unwrap(), 2.0 / 3.0, epsilon = 1e-15);
        assert!(informativeness(0.6).is_err());
        assert!(informativeness(-0.1).is_err());
    }

    #[test]
    fn flip_prob_examples() {
        let s = FlipSchedule::constant(0.2).unwrap();
        for k in [1, 7, 1_000_000] {
            assert_eq!(s.flip_prob(k), 0.2);
        }
        assert_eq!(flip_for_informativeness(1.0), 0.0);
        assert_abs_diff_eq!(flip_for_informativeness(2.0 / 3.0), 0.25, epsilon = 1e-15);
        assert_eq!(flip_for_informativeness(0.0), 0.5);
    }

    #[test]
    fn constant_above_half_is_folded() {
        let s = FlipSchedule::constant(0.7).unwrap();
        assert_abs_diff_eq!(s.flip_prob(3), 0.3, epsilon = 1e-15);
        assert_eq!(s.folded_from(), Some(0.7));
        assert!(FlipSchedule::constant(1.5).is_err());
    }

    #[test]
    fn bad_family_parameters_fail_at_construction() {
        assert!(FlipSchedule::from_informativeness(FlipFamily::Power { p: 0.0 }, 1.0).is_err());
        assert!(FlipSchedule::from_informativeness(FlipFamily::Power { p: 1.5 }, 1.0).is_err());
        assert!(FlipSchedule::from_informativeness(FlipFamily::LogPower { p: -1.0 }, 1.0).is_err());
        assert!(FlipSchedule::from_informativeness(FlipFamily::Reciprocal, 0.0).is_err());
        assert!(ErasureSchedule::theorem4(1.0, 1.0).is_err());
        assert!(ErasureSchedule::constant(1.1).is_err());
    }

    #[test]
    fn log_families_reuse_second_stage() {
        for family in [FlipFamily::Log, FlipFamily::LogPower { p: 0.5 }] {
            let s = FlipSchedule::from_informativeness(family, 0.3).unwrap();
            assert_eq!(s.flip_prob(1), s.flip_prob(2));
        }
    }

    fn families() -> Vec<FlipSchedule> {
        vec![
            FlipSchedule::constant(0.3).unwrap(),
            FlipSchedule::from_informativeness(FlipFamily::Power { p: 0.5 }, 1.0).unwrap(),
            FlipSchedule::from_informativeness(FlipFamily::Reciprocal, 1.0).unwrap(),
            FlipSchedule::from_informativeness(FlipFamily::LogPower { p: 0.5 }, 1.0).unwrap(),
            FlipSchedule::from_informativeness(FlipFamily::LogPower { p: 2.0 }, 1.0).unwrap(),
            FlipSchedule::from_informativeness(FlipFamily::Log, 1.0).unwrap(),
        ]
    }

    proptest! {
        #[test]
        fn flip_prob_stays_in_range(k in 1u64..10_000_000) {
            for s in families() {
                let q = s.flip_prob(k);
                prop_assert!((0.0..=0.5).contains(&q));
            }
        }

        #[test]
        fn informativeness_roundtrips(k in 1u64..10_000_000) {
            for s in families().into_iter().filter(|s| !s.is_constant()) {
                let q = s.flip_prob(k);
                let back = informativeness(q).unwrap();
                prop_assert!((back - s.informativeness_at(k)).abs() < 1e-12);
            }
        }

        #[test]
        fn informativeness_is_decreasing(a in 0.0f64..0.5, b in 0.0f64..0.5) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(informativeness(lo).unwrap() >= informativeness(hi).unwrap());
        }

        #[test]
        fn erasure_levels_in_range(depth in 0u64..10_000_000, c in 0.01f64..100.0, eps in 1.001f64..10.0) {
            let s = ErasureSchedule::theorem4(c, eps).unwrap();
            let l = s.level(0, depth);
            prop_assert!((0.0..=1.0).contains(&l));
        }
    }

    #[test]
    fn theorem4_level_tends_to_one() {
        let s = ErasureSchedule::theorem4(1.0, 2.0).unwrap();
        assert_abs_diff_eq!(s.level(1, 10), 10f64.powf(-0.2), epsilon = 1e-15);
        let mut prev = 0.0;
        for n in [10, 100, 1_000, 10_000, 100_000] {
            let l = s.level(0, n);
            assert!(l > prev);
            prev = l;
        }
        assert!(prev > 0.999);
    }

    #[test]
    fn log_power_partial_sums() {
        // p > 1: Cauchy tail; p <= 1: exceeds B = 20 at some computable k.
        let summable =
            FlipSchedule::from_informativeness(FlipFamily::LogPower { p: 2.0 }, 1.0).unwrap();
        let partial =
            |s: &FlipSchedule, n: u64| (2..=n).map(|k| s.informativeness_at(k)).sum::<f64>();
        let a = partial(&summable, 1_000_000);
        let b = partial(&summable, 2_000_000);
        assert!(b - a < 0.01);

        // p <= 1: the integral test gives an explicit k(B) by which the partial
        // sum from k = 2 must exceed B; the summation must cross before it.
        let bound = 20.0;
        for (family, antiderivative) in [
            (FlipFamily::Log, (|x: f64| x.ln().ln()) as fn(f64) -> f64),
            (FlipFamily::LogPower { p: 0.5 }, |x: f64| {
                2.0 * x.ln().sqrt()
            }),
        ] {
            let scale = 10.0;
            let s = FlipSchedule::from_informativeness(family, scale).unwrap();
            // First stage where Q_k is no longer clamped at 1.
            let a = (2u64..).find(|&k| s.informativeness_at(k) < 1.0).unwrap();
            let prefix = (a - 2) as f64;
            // prefix + scale * (F(n + 1) - F(a)) >= bound, solved for n by bisection.
            let (mut lo, mut hi) = (a as f64, 1e12);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if prefix + scale * (antiderivative(mid + 1.0) - antiderivative(a as f64)) >= bound
                {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let k_bound = hi.ceil() as u64;
            let mut sum = 0.0;
            let crossing = (2..=k_bound).find(|&k| {
                sum += s.informativeness_at(k);
                sum > bound
            });
            assert!(
                crossing.is_some(),
                "{family:?}: no crossing by k(B) = {k_bound}"
            );
        }
    }

    #[test]
    fn transmit_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let erase_all = Channel::Erasure(ErasureSchedule::constant(1.0).unwrap());
        let clean = Channel::Flip(FlipSchedule::constant(0.0).unwrap());
        for _ in 0..1000 {
            assert_eq!(erase_all.transmit(1, 1, 1, &mut rng), Symbol::Erased);
            assert_eq!(clean.transmit(1, 1, 0, &mut rng), Symbol::Zero);
            assert_eq!(clean.transmit(1, 1, 1, &mut rng), Symbol::One);
        }
        let noisy = Channel::Flip(FlipSchedule::constant(0.2).unwrap());
        let n = 100_000;
        let flips = (0..n)
            .filter(|_| noisy.transmit(5, 0, 1, &mut rng) == Symbol::Zero)
            .count();
        let sigma = (0.2 * 0.8 / n as f64).sqrt();
        assert!((flips as f64 / n as f64 - 0.2).abs() < 3.0 * sigma);
        // Flip channel never erases.
        assert!((0..1000).all(|_| noisy.transmit(2, 0, 0, &mut rng) != Symbol::Erased));
    }

    #[test]
    fn symbol_probs_sum_to_one() {
        let chans = [
            Channel::Erasure(ErasureSchedule::per_input(0.2, 0.4).unwrap()),
            Channel::Flip(FlipSchedule::constant(0.1).unwrap()),
        ];
        for c in &chans {
            for bit in [0, 1] {
                let p = c.symbol_probs(3, 2, bit);
                assert_abs_diff_eq!(p.iter().sum::<f64>(), 1.0, epsilon = 1e-15);
            }
        }
        assert_eq!(chans[0].symbol_probs(1, 0, 1), [0.0, 0.6, 0.4]);
    }
}
