use thiserror::Error;

/// Errors surfaced by the library and the experiment runner.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("parameter layout mismatch: {0}")]
    Layout(String),

    #[error("token {token} out of range for vocabulary of size {vocab}")]
    TokenOutOfRange { token: u32, vocab: usize },

    #[error("reverse KL diverges: {0}")]
    Divergence(String),

    #[error("support set carries zero mass")]
    DegenerateSupport,

    #[error("enumeration of {requested} sequences exceeds the cap of {cap}")]
    SizeCap { requested: String, cap: u64 },

    #[error("training did not converge: {0}")]
    Convergence(String),

    #[error("check failed: {0}")]
    Assertion(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
