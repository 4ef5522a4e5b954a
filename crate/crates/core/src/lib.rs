//! Sequential binary hypothesis testing in feedforward networks whose
//! broadcast decisions are erased or flipped.
//!
//! Three independent routes to the same error probabilities live here:
//! [`exact_dp`] propagates window distributions exactly, [`asymptotics`]
//! iterates the scalar recursions that govern the public belief, and
//! [`montecarlo`] simulates the network trial by trial.

pub mod analysis;
pub mod asymptotics;
pub mod belief;
pub mod channels;
pub mod config;
pub mod error;
pub mod exact_dp;
pub mod montecarlo;
pub mod presets;
pub mod strategy;
pub mod topology;

pub use belief::{BeliefModel, Hypothesis};
pub use channels::{Channel, ErasureSchedule, FlipFamily, FlipSchedule, Symbol};
pub use config::{ExperimentConfig, Task};
pub use error::{Error, Result};
pub use strategy::{DecisionMode, ThresholdRule};
pub use topology::MemorySchedule;
