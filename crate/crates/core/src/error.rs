use thiserror::Error;

/// One schema problem found while validating an experiment config.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    /// Dotted key path, e.g. `covariance.factors[1].beta`.
    pub path: String,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("tabulated covariance has no value at lag {lag:?}")]
    MissingLag { lag: Vec<i64> },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unsupported structure: {0}")]
    UnsupportedStructure(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("degenerate function: all Hermite coefficients below tolerance")]
    DegenerateFunction,

    #[error("covariance is not circulant-embeddable on this lattice (min eigenvalue {min_eigenvalue:e})")]
    NonEmbeddable { min_eigenvalue: f64 },

    #[error("size limit exceeded: {0}")]
    SizeLimit(String),

    #[error("hypothesis violated by factor {factor}: {reason}")]
    HypothesisViolation { factor: usize, reason: String },

    #[error("incomplete model metadata: {0}")]
    IncompleteModel(String),

    #[error("too few samples: need at least {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("degenerate variance: samples are constant")]
    DegenerateVariance,

    #[error("coordinate {coordinate} out of range for axis of size {size}")]
    OutOfRange { coordinate: usize, size: usize },

    #[error("rung {rung}: {source}")]
    Rung {
        rung: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid config:\n{}", .0.iter().map(|v| format!("  {v}")).collect::<Vec<_>>().join("\n"))]
    Config(Vec<Violation>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization: {0}")]
    Serialization(String),
}

impl Error {
    /// Process exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Rung { source, .. } => source.exit_code(),
            Error::NumericalFailure(_)
            | Error::NonEmbeddable { .. }
            | Error::DegenerateVariance
            | Error::DegenerateFunction => 3,
            Error::Io(_) | Error::Serialization(_) => 1,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
