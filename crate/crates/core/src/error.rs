//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated a documented precondition.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A split tier came out empty for the given dataset and fractions.
    #[error("split failed: {tier} tier is empty")]
    SplitEmpty { tier: &'static str },

    /// Malformed or inconsistent on-disk artifact.
    #[error("format error: {0}")]
    Format(String),

    /// A prior encoder produced an unusable embedding for a sample.
    #[error("prior encoder failed on sample {sample}: {reason}")]
    Encoder { sample: usize, reason: String },

    /// A computation produced non-finite values.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Invalid or inconsistent configuration.
    #[error("config error: {0}")]
    Config(String),

    /// Operation called in a state that cannot serve it.
    #[error("state error: {0}")]
    State(String),

    /// Labels are missing or degenerate for a label-dependent operation.
    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
