//! Memory schedules and the backward-searching chain construction.
//!
//! Node `k` observes the last `m_k` broadcasts. The backward search from node
//! `k` hops `n` times, each hop scanning the `n` predecessors of the current
//! node for the nearest unerased decision, so a completed search is a tandem
//! chain of length `n` inside the last `n^2 + 1` nodes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum MemorySchedule {
    /// `m_k = min(C, k - 1)`.
    Bounded {
        #[serde(rename = "C")]
        c: u32,
    },
    /// `m_k = min(ceil(k^sigma), k - 1)`.
    Power { sigma: f64 },
    /// `m_k = k - 1`.
    Full,
    /// Unbounded but not diverging: `m_k = sqrt(k)` at perfect squares, 1 otherwise.
    SparseSquares,
}

impl MemorySchedule {
    pub fn bounded(c: u32) -> Result<Self> {
        if c == 0 {
            return Err(Error::Config("memory.C must be a positive integer".into()));
        }
        Ok(MemorySchedule::Bounded { c })
    }

    pub fn power(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma <= 1.0) {
            return Err(Error::Domain {
                what: "memory.sigma",
                value: sigma,
                domain: "(0, 1]",
            });
        }
        Ok(MemorySchedule::Power { sigma })
    }

    pub fn bound(&self) -> Option<u32> {
        match *self {
            MemorySchedule::Bounded { c } => Some(c),
            _ => None,
        }
    }

    pub fn memory_size(&self, k: u64) -> u64 {
        let available = k.saturating_sub(1);
        let m = match *self {
            MemorySchedule::Bounded { c } => u64::from(c),
            MemorySchedule::Power { sigma } => (k as f64).powf(sigma).ceil() as u64,
            MemorySchedule::Full => available,
            MemorySchedule::SparseSquares => {
                let r = isqrt(k);
                if r * r == k {
                    r
                } else {
                    1
                }
            }
        };
        m.min(available)
    }

    fn is_nondecreasing(&self) -> bool {
        !matches!(self, MemorySchedule::SparseSquares)
    }

    /// Largest `n` such that a length-`n` backward search from node `k` fits:
    /// the landing node `k - n^2` exists (`n^2 <= k - 1`) and every node that
    /// performs a hop, i.e. every node in `[k - n^2 + n, k]`, observes at
    /// least `n` predecessors. Returns 0 when no `n >= 1` qualifies.
    pub fn backward_search_depth(&self, k: u64) -> u64 {
        if k < 2 {
            return 0;
        }
        // Feasibility is monotone in n, so scan down from the largest candidate.
        let mut n = isqrt(k - 1);
        while n >= 1 {
            if self.search_fits(k, n) {
                return n;
            }
            n -= 1;
        }
        0
    }

    fn search_fits(&self, k: u64, n: u64) -> bool {
        let first_hop = k - n * n + n;
        if self.is_nondecreasing() {
            self.memory_size(first_hop) >= n
        } else {
            (first_hop..=k).all(|j| self.memory_size(j) >= n)
        }
    }
}

/// `floor(sqrt(x))` for integers.
pub fn isqrt(x: u64) -> u64 {
    if x == 0 {
        return 0;
    }
    let mut r = (x as f64).sqrt() as u64;
    while r * r > x {
        r -= 1;
    }
    while (r + 1) * (r + 1) <= x {
        r += 1;
    }
    r
}

/// Lower bound `(1 - level^n)^n` on the probability that a length-`n`
/// backward search completes when every broadcast is erased w.p. `level`.
pub fn chain_success_probability(erasure_level: f64, n: u64) -> f64 {
    let miss = erasure_level.powf(n as f64);
    (1.0 - miss).powf(n as f64)
}
