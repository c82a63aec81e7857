use thiserror::Error;

/// Errors surfaced by every stage of the pipeline.
#[derive(Error, Debug)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("non-finite gradient in parameter group '{group}'")]
    NonFiniteGradient { group: String },

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("too few samples: got {got}, need at least {min}")]
    TooFewSamples { got: usize, min: usize },

    #[error("constant column '{0}' has zero variance")]
    ConstantColumn(String),

    #[error("missing column '{0}'")]
    MissingColumn(String),

    #[error("cannot parse cell at row {row}, column '{column}': {value:?}")]
    BadCell {
        row: usize,
        column: String,
        value: String,
    },

    #[error("rank-deficient conditioning matrix after regularization")]
    RankDeficient,

    #[error("zero-variance latent series")]
    ZeroVariance,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("not enough eligible node pairs: requested {requested}, found {found}")]
    InsufficientTriplets { requested: usize, found: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
