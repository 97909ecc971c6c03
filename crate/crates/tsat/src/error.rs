//! Error types shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, TsatError>;

#[derive(Debug, Error)]
pub enum TsatError {
    /// Tensor or matrix shapes do not conform for the requested operation.
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    /// An operation was called outside its contract (e.g. backward on a
    /// non-scalar node).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A user-supplied parameter is outside its valid range.
    #[error("invalid parameter {name}: {detail}")]
    Parameter { name: &'static str, detail: String },

    /// A signal has too few extrema to build spline envelopes.
    #[error("degenerate signal: {0}")]
    DegenerateSignal(String),

    /// Strict parse failure with a located cell (1-based row/column).
    #[error("parse error in {path} at row {row}, column {col}: {detail}")]
    Parse {
        path: String,
        row: usize,
        col: usize,
        detail: String,
    },

    /// A serialized document is malformed or its header disagrees with the
    /// payload.
    #[error("integrity error in {path}: {detail}")]
    Integrity { path: String, detail: String },

    /// Run configuration is unusable (empty splits, missing files, ...).
    #[error("configuration error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}


impl TsatError {
    pub fn dimension(op: &'static str, detail: impl Into<String>) -> Self {
        TsatError::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        TsatError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code convention: 2 for bad user input, 1 for internal
    /// contract violations.
    pub fn exit_code(&self) -> i32 {
        match self {
            TsatError::Dimension { .. } | TsatError::Contract(_) => 1,
            TsatError::Parameter { .. }
            | TsatError::DegenerateSignal(_)
            | TsatError::Parse { .. }
            | TsatError::Integrity { .. }
            | TsatError::Config(_)
            | TsatError::Io { .. } => 2,
        }
    }
}
