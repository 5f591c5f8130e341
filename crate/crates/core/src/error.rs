use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("sample size {n} exceeds population size {population}")]
    SampleTooLarge { n: usize, population: usize },

    #[error("no feasible scaling constant: target size {n} with population size {population}")]
    InfeasibleCalibration { n: usize, population: usize },

    #[error("learner fit failed: {0}")]
    Fit(String),

    #[error("learner fit failed on split {split}: {reason}")]
    SplitFit { split: usize, reason: String },

    #[error("unit {0} is in the training set of every split; increase the number of splits")]
    NoOutOfBag(usize),

    #[error("no prediction stored for unit {unit} on split {split}")]
    MissingPrediction { split: usize, unit: usize },

    #[error("test-set inclusion weight for unit {0} is missing or zero")]
    MissingWeight(usize),

    #[error("split runs do not share the same split sequence")]
    MismatchedSplits,

    #[error("matrix is not symmetric at ({0}, {1})")]
    NotSymmetric(usize, usize),

    #[error("enumeration limit exceeded: {0}")]
    EnumerationLimit(String),

    #[error("config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
