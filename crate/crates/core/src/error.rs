use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Operand extents do not satisfy an operation's shape contract.
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// A forward computation produced a NaN or infinity.
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    /// An API contract other than shapes was violated (e.g. non-scalar loss).
    #[error("contract violation in {op}: {detail}")]
    Contract { op: &'static str, detail: String },

    /// Invalid model or pipeline configuration.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Malformed STF1 container or checkpoint file.
    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    pub fn contract(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Contract { op, detail: detail.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
