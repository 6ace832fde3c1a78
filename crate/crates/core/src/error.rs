use thiserror::Error;

/// Errors raised anywhere in the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid value for `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("covariance is not positive semidefinite after conditioning (smallest eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },

    #[error("response map does not fit the model: {0}")]
    MapMismatch(String),

    #[error("channel `{0}` is not registered")]
    UnregisteredChannel(String),

    #[error(
        "constraint on entry {index} is infeasible: reachable value {value:e} lies outside [{lower:e}, {upper:e}]"
    )]
    InfeasibleConstraint {
        index: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("window [{start}, {end}) lies outside a signal of {len} samples")]
    WindowOutOfRange { start: usize, end: usize, len: usize },

    #[error("target frequency {target} Hz exceeds source frequency {source_rate} Hz")]
    Upsampling { target: f64, source_rate: f64 },

    #[error("reference signal has zero norm")]
    ZeroReference,

    #[error("event {index} at t = {time} s: {source}")]
    AtEvent {
        index: usize,
        time: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub(crate) fn invalid(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn at_event(self, index: usize, time: f64) -> Self {
        Error::AtEvent {
            index,
            time,
            source: Box::new(self),
        }
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
