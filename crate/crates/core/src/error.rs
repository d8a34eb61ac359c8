use std::path::PathBuf;

/// Errors raised by the estimation, allocation, and experiment layers.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("arm index {arm} out of range for {num_arms} arms")]
    InvalidArm { arm: usize, num_arms: usize },

    #[error("record for arm {record} applied to state of arm {state}")]
    ArmMismatch { record: usize, state: usize },

    #[error("audited record at round {t} carries no label")]
    MissingLabel { t: u64 },

    #[error("propensity {pi} at round {t} is below the positivity floor {pi_min}")]
    PropensityBelowFloor { t: u64, pi: f64, pi_min: f64 },

    #[error("arm {arm} has no pulls yet")]
    NoData { arm: usize },

    #[error("the `never` audit policy violates positivity and is only usable as a judge-only baseline")]
    PositivityViolation,

    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
