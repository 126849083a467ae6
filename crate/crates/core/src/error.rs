//! Error types shared across the crate.

use thiserror::Error;

/// Unified error type for the trading laboratory.
#[derive(Debug, Error)]
pub enum CoreError {
    /// A configuration value is invalid; names the offending field.
    #[error("invalid configuration: {field}: {reason}")]
    Config { field: String, reason: String },

    /// A dataset failed validation while loading; carries the 1-based data
    /// row number where the problem was found (0 = header / file level).
    #[error("data load error at row {row}: {reason}")]
    DataLoad { row: usize, reason: String },

    /// A requested value lies outside the valid range.
    #[error("range error: {0}")]
    Range(String),

    /// Not enough history to compute a windowed quantity.
    #[error("window error: {0}")]
    Window(String),

    /// Dimension mismatch between parameters and inputs.
    #[error("shape error: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    /// An operation received invalid inputs.
    #[error("input error: {0}")]
    Input(String),

    /// An operation was called in a state that does not permit it.
    #[error("lifecycle error: {0}")]
    Lifecycle(String),

    /// Training aborted with a diagnostic (e.g. non-finite gradient).
    #[error("training error at epoch {epoch}, step {step}: {reason}")]
    Training {
        epoch: usize,
        step: usize,
        reason: String,
    },

    /// Underlying I/O failure with the path involved.
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// CSV-level parse failure.
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl CoreError {
    /// Convenience constructor for configuration errors.
    pub fn config(field: &str, reason: impl Into<String>) -> Self {
        CoreError::Config {
            field: field.to_string(),
            reason: reason.into(),
        }
    }

    /// Convenience constructor for load errors.
    pub fn data(row: usize, reason: impl Into<String>) -> Self {
        CoreError::DataLoad {
            row,
            reason: reason.into(),
        }
    }

    /// Wrap an I/O error with its path.
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        CoreError::Io {
            path: path.into(),
            source,
        }
    }
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, CoreError>;
