use thiserror::Error;

/// Errors raised by the transport, barycenter, post-processing and I/O layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("distribution has no support points")]
    EmptyDistribution,

    #[error("support points must have dimension >= 1")]
    ZeroDimension,

    #[error("weight {index} is {value:e}; weights must be finite and >= 1e-15")]
    InvalidWeight { index: usize, value: f64 },

    #[error("weights sum to {0}, which deviates from 1 by more than 1e-9")]
    WeightsNotNormalized(f64),

    #[error("non-finite value {value} at {context}")]
    NonFinite { context: String, value: f64 },

    #[error("transport problem is infeasible: {0}")]
    Infeasible(String),

    #[error("linear program did not converge: {0}")]
    NotConverged(String),

    #[error("no groups supplied")]
    NoGroups,

    #[error("group {0:?} has no records")]
    EmptyGroup(String),

    #[error("unknown group {0:?}")]
    UnknownGroup(String),

    #[error("record is not part of the training supports of group {0:?}")]
    NotInSample(String),

    #[error("alpha must lie in [0, 1], got {0}")]
    InvalidAlpha(f64),

    #[error("bandwidth must be finite and positive, got {0}")]
    InvalidBandwidth(f64),

    #[error("exact barycenter needs {tuples} support tuples, above the cap of {cap}")]
    OracleCapExceeded { tuples: u128, cap: u128 },

    #[error("no records for group {group:?} with label {label}")]
    EmptyCell { group: String, label: usize },

    #[error("records are missing class labels")]
    MissingLabels,

    #[error("no post-processor fitted for label {0}")]
    UnknownLabel(usize),

    #[error("{0}")]
    Invalid(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("unsupported model format version {0}")]
    FormatVersion(u32),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Infeasible(_) | Error::NotConverged(_) => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
