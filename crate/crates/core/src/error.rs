use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("format error: {0}")]
    Format(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("divergence: {0}")]
    Divergence(String),
    #[error("partition error: {0}")]
    Partition(String),
    #[error("corrupt data at byte offset {offset}: {message}")]
    Corrupt { offset: usize, message: String },
    #[error("missing artifact: {0}")]
    MissingArtifact(String),
    #[error("leakage detected: {0}")]
    Leakage(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable tag for the error class.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Format(_) => "format",
            Error::Unsupported(_) => "unsupported",
            Error::Config(_) => "config",
            Error::Domain(_) => "domain",
            Error::Shape(_) => "shape",
            Error::Contract(_) => "contract",
            Error::Divergence(_) => "divergence",
            Error::Partition(_) => "partition",
            Error::Corrupt { .. } => "corrupt",
            Error::MissingArtifact(_) => "missing_artifact",
            Error::Leakage(_) => "leakage",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
