use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the simulator and its numerical kernels.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated a documented precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A matrix that must have full row rank is (numerically) rank deficient.
    #[error("singular matrix: sigma_min/sigma_max = {ratio:.3e} is below the rank tolerance")]
    Singular { ratio: f64 },

    /// Fewer usable singular values than requested streams.
    #[error(
        "rank deficient: {requested} streams requested but singular values are {singular_values:?}"
    )]
    RankDeficient {
        requested: usize,
        singular_values: Vec<f64>,
    },

    /// The pilot-to-tap conversion matrix is too badly conditioned to invert.
    #[error("ill-conditioned pilot pattern: condition number {condition:.3e} exceeds {limit:.1e}")]
    IllConditionedPilots { condition: f64, limit: f64 },

    /// Not enough disjoint pilot patterns for the requested transmitters.
    #[error("pilot capacity exceeded: {requested} disjoint patterns requested, only {available} available (S = {subcarriers}, L = {taps})")]
    PilotCapacity {
        requested: usize,
        available: usize,
        subcarriers: usize,
        taps: usize,
    },

    /// Sample statistics need at least two samples.
    #[error("degenerate statistics: {0}")]
    DegenerateStatistics(String),

    /// Scenario validation failed; every violated constraint is listed.
    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    InvalidConfig(Vec<String>),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serialization(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
