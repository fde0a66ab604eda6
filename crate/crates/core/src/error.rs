use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown space `{0}`")]
    UnknownSpace(String),

    #[error("space `{0}` appears more than once; address it by position")]
    AmbiguousSpace(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("operator is not Hermitian (deviation {0:.3e})")]
    NotHermitian(f64),

    #[error("operator is not positive semidefinite (min eigenvalue {0:.3e})")]
    NotPositive(f64),

    #[error("trace is {got}, expected {expected}")]
    Trace { got: f64, expected: f64 },

    #[error("POVM elements do not sum to the identity (deviation {0:.3e})")]
    Completeness(f64),

    #[error("map is not trace preserving (deviation {0:.3e})")]
    NotTracePreserving(f64),

    #[error("invalid count record: {0}")]
    Record(String),

    #[error("invalid dataset: {0}")]
    Dataset(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
