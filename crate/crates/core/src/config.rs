//! Experiment configuration and its JSON document form.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::belief::BeliefModel;
use crate::channels::{Channel, ErasureSchedule, FlipFamily, FlipSchedule};
use crate::error::{Error, Result};
use crate::strategy::{DecisionMode, ThresholdRule};
use crate::topology::MemorySchedule;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub model: BeliefModel,
    pub channel: Channel,
    pub memory: MemorySchedule,
    pub mode: DecisionMode,
    pub horizon: u64,
    pub trials: u64,
    pub seed: u64,
    /// Trials per hypothesis in the marginal-calibration pass of the
    /// nearest-unerased rule.
    pub calibration_trials: u64,
}

impl ExperimentConfig {
    pub fn new(model: BeliefModel, channel: Channel, memory: MemorySchedule) -> Self {
        Self {
            model,
            channel,
            memory,
            mode: DecisionMode::Map,
            horizon: 100,
            trials: 1000,
            seed: 0,
            calibration_trials: 10_000,
        }
    }

    pub fn with_horizon(mut self, horizon: u64) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn with_trials(mut self, trials: u64) -> Self {
        self.trials = trials;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_calibration_trials(mut self, trials: u64) -> Self {
        self.calibration_trials = trials;
        self
    }

    pub fn rule(&self) -> ThresholdRule {
        ThresholdRule::new(self.mode, &self.model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        match (&self.channel, self.memory) {
            (Channel::Flip(_), MemorySchedule::Bounded { .. } | MemorySchedule::Full) => Ok(()),
            (Channel::Flip(_), _) => Err(Error::Config(
                "channel.kind = flip supports memory.family bounded or full only".into(),
            )),
            (Channel::Erasure(_), MemorySchedule::Bounded { .. }) => Ok(()),
            (Channel::Erasure(s), _) if !s.is_symmetric() => Err(Error::Config(
                "channel.params.level0/level1 must match when memory.family is unbounded".into(),
            )),
            (Channel::Erasure(_), _) if self.calibration_trials == 0 => Err(Error::Config(
                "strategy.calibration_trials must be at least 1 for erasure with unbounded memory"
                    .into(),
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    #[default]
    Simulate,
    Exact,
    Martingale,
    Herding,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    Flip,
    Erasure,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    pub kind: ChannelKind,
    #[serde(default = "default_family")]
    pub family: String,
    #[serde(default)]
    pub params: ChannelParams,
}

fn default_family() -> String {
    "constant".into()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategySpec {
    #[serde(default)]
    pub mode: DecisionMode,
    #[serde(default = "default_calibration")]
    pub calibration_trials: u64,
}

impl Default for StrategySpec {
    fn default() -> Self {
        Self {
            mode: DecisionMode::Map,
            calibration_trials: default_calibration(),
        }
    }
}

fn default_calibration() -> u64 {
    10_000
}

fn default_prior() -> f64 {
    0.5
}

fn default_horizon() -> u64 {
    100
}

fn default_trials() -> u64 {
    1000
}

fn default_k0() -> f64 {
    0.5
}

fn default_k_max() -> u32 {
    12
}

/// On-disk configuration document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigDocument {
    pub schema: u32,
    #[serde(default)]
    pub task: Task,
    #[serde(default)]
    pub beta: f64,
    #[serde(default = "default_prior")]
    pub prior_1: f64,
    pub channel: ChannelSpec,
    pub memory: MemorySchedule,
    #[serde(default)]
    pub strategy: StrategySpec,
    #[serde(default = "default_horizon")]
    pub horizon: u64,
    #[serde(default = "default_trials")]
    pub trials: u64,
    #[serde(default)]
    pub seed: u64,
    /// Cut point of the herding proxy as a fraction of the horizon.
    #[serde(default = "default_k0")]
    pub k0_fraction: f64,
    /// Enumeration horizon for the martingale task.
    #[serde(default = "default_k_max")]
    pub k_max: u32,
}

/// A validated configuration together with the warnings raised while
/// building it.
#[derive(Debug, Clone)]
pub struct ParsedConfig {
    pub document: ConfigDocument,
    pub experiment: ExperimentConfig,
    pub warnings: Vec<String>,
}

impl ParsedConfig {
    pub fn task(&self) -> Task {
        self.document.task
    }

    pub fn hash(&self) -> String {
        config_hash(&self.document)
    }
}

fn require(value: Option<f64>, key: &str) -> Result<f64> {
    value.ok_or_else(|| Error::Config(format!("missing required key channel.params.{key}")))
}

impl ChannelSpec {
    pub fn build(&self) -> Result<Channel> {
        let p = &self.params;
        let family = self.family.as_str();
        match self.kind {
            ChannelKind::Flip => {
                let scale = p.scale.unwrap_or(1.0);
                let schedule = match family {
                    "constant" => FlipSchedule::constant(require(p.q, "q")?)?,
                    "power" => FlipSchedule::from_informativeness(FlipFamily::Power { p: require(p.p, "p")? }, scale)?,
                    "reciprocal" => FlipSchedule::from_informativeness(FlipFamily::Reciprocal, scale)?,
                    "log_power" => {
                        FlipSchedule::from_informativeness(FlipFamily::LogPower { p: require(p.p, "p")? }, scale)?
                    }
                    "log" => FlipSchedule::from_informativeness(FlipFamily::Log, scale)?,
                    other => {
                        return Err(Error::Config(format!(
                            "channel.family = {other} is not a flip family (constant, power, reciprocal, log_power, log)"
                        )))
                    }
                };
                Ok(Channel::Flip(schedule))
            }
            ChannelKind::Erasure => {
                let schedule = match family {
                    "constant" => match (p.level, p.level0, p.level1) {
                        (Some(l), None, None) => ErasureSchedule::constant(l)?,
                        (None, Some(l0), Some(l1)) => ErasureSchedule::per_input(l0, l1)?,
                        _ => return Err(Error::Config(
                            "erasure channel.params needs either level or both level0 and level1"
                                .into(),
                        )),
                    },
                    "theorem4" => {
                        ErasureSchedule::theorem4(require(p.c, "c")?, require(p.eps, "eps")?)?
                    }
                    other => {
                        return Err(Error::Config(format!(
                            "channel.family = {other} is not an erasure family (constant, theorem4)"
                        )))
                    }
                };
                Ok(Channel::Erasure(schedule))
            }
        }
    }
}

impl ConfigDocument {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn validate(self) -> Result<ParsedConfig> {
        if self.schema != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema = {} is not supported (expected {SCHEMA_VERSION})",
                self.schema
            )));
        }
        let model = BeliefModel::new(self.beta, self.prior_1)?;
        let channel = self.channel.build()?;
        let memory = match self.memory {
            MemorySchedule::Bounded { c } => MemorySchedule::bounded(c)?,
            MemorySchedule::Power { sigma } => MemorySchedule::power(sigma)?,
            other => other,
        };
        let mut warnings = Vec::new();
        if let Channel::Flip(s) = &channel {
            if let Some(q) = s.folded_from() {
                warnings.push(format!(
                    "channel.params.q = {q} folded to {} by channel symmetry",
                    1.0 - q
                ));
            }
        }
        match self.task {
            Task::Martingale => {
                if self.channel.kind != ChannelKind::Flip || memory != MemorySchedule::Full {
                    return Err(Error::Config(
                        "task = martingale needs channel.kind = flip and memory.family = full"
                            .into(),
                    ));
                }
            }
            Task::Exact => {
                if memory.bound().is_none() {
                    return Err(Error::Config(
                        "task = exact needs memory.family = bounded".into(),
                    ));
                }
            }
            Task::Herding => {
                if !(self.k0_fraction > 0.0 && self.k0_fraction < 1.0) {
                    return Err(Error::Domain {
                        what: "k0_fraction",
                        value: self.k0_fraction,
                        domain: "(0, 1)",
                    });
                }
            }
            Task::Simulate => {}
        }
        let experiment = ExperimentConfig {
            model,
            channel,
            memory,
            mode: self.strategy.mode,
            horizon: self.horizon,
            trials: self.trials,
            seed: self.seed,
            calibration_trials: self.strategy.calibration_trials,
        };
        if self.task != Task::Martingale {
            experiment.validate()?;
        }
        Ok(ParsedConfig {
            document: self,
            experiment,
            warnings,
        })
    }
}

pub fn parse_config_str(text: &str) -> Result<ParsedConfig> {
    ConfigDocument::from_json(text)?.validate()
}

pub fn parse_config(path: impl AsRef<Path>) -> Result<ParsedConfig> {
    parse_config_str(&std::fs::read_to_string(path)?)
}

/// Hex SHA-256 of the compact JSON form of `value`.
pub fn config_hash<T: Serialize + ?Sized>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("configuration serializes");
    Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
