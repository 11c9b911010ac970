use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: expected {expected}, found {found}")]
    Shape { op: String, expected: String, found: String },

    #[error("{what} index {index} out of range (bound {bound})")]
    OutOfRange { what: &'static str, index: usize, bound: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("loss must be a scalar, found shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("loss function is not deterministic: {first} then {second}")]
    NonDeterministic { first: f64, second: f64 },

    #[error("non-finite {term} at training step {step}")]
    Diverged { step: u64, term: &'static str },

    #[error("parameter `{0}` defined twice")]
    DuplicateParameter(String),

    #[error("unknown parameter `{0}`")]
    MissingParameter(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("invalid dataset: {0}")]
    Dataset(String),

    #[error("invalid checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: impl Into<String>, expected: impl ToString, found: impl ToString) -> Self {
        Error::Shape { op: op.into(), expected: expected.to_string(), found: found.to_string() }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
