use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid parameters or configuration (bad band, even window, shape mismatch).
    #[error("configuration error: {0}")]
    Config(String),
    /// Input data violating an operation's preconditions.
    #[error("input error: {0}")]
    Input(String),
    /// Input that makes the quantity undefined (zero range, zero norm).
    #[error("degenerate input: {0}")]
    Degenerate(String),
    /// Arguments outside a formula's domain.
    #[error("domain error: {0}")]
    Domain(String),
    /// Operation called in the wrong object state.
    #[error("state error: {0}")]
    State(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

pub(crate) fn input<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Input(msg.into()))
}

pub(crate) fn degenerate<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Degenerate(msg.into()))
}

pub(crate) fn state<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::State(msg.into()))
}
