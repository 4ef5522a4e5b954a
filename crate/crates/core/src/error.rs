use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{what} = {value} is outside its domain {domain}")]
    Domain {
        what: &'static str,
        value: f64,
        domain: &'static str,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{what} = {requested} exceeds the supported limit of {limit}")]
    Capacity {
        what: &'static str,
        requested: u64,
        limit: u64,
    },

    #[error("observed symbol {symbol} has zero probability under both hypotheses")]
    DegenerateEvidence { symbol: u8 },

    #[error("recursion step at k = {k} leaves (0, 1): delta_k * c_k^n = {product}")]
    StepSize { k: u64, product: f64 },

    #[error("need at least {needed} points at stage >= {k_min}, found {found}")]
    InsufficientPoints {
        needed: usize,
        found: usize,
        k_min: u64,
    },

    #[error("series value {value} at stage {stage} cannot be fitted")]
    NonPositive { stage: u64, value: f64 },

    #[error("unknown preset `{name}`; available presets: {available}")]
    UnknownPreset { name: String, available: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_unit(what: &'static str, value: f64) -> Result<f64> {
    if (0.0..=1.0).contains(&value) {
        Ok(value)
    } else {
        Err(Error::Domain {
            what,
            value,
            domain: "[0, 1]",
        })
    }
}
