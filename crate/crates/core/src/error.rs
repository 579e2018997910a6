use thiserror::Error;

/// Errors raised by the optimization library.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside the domain of the model.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A structural check failed (cardinalities, dimensions, search caps).
    #[error("validation error: {0}")]
    Validation(String),

    /// A numerical routine failed to produce a usable result.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// A configuration document could not be parsed or is inconsistent.
    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
