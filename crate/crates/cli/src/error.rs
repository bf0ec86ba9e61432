use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] swap_core::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config line {line}, column {column}: {message}")]
    ConfigSyntax { line: usize, column: usize, message: String },

    #[error("config field `{field}` must be {bound}, got {value}")]
    Constraint {
        field: &'static str,
        bound: &'static str,
        value: String,
    },

    #[error("config field `{field}` refers to a missing file: {path}")]
    MissingFile { field: &'static str, path: PathBuf },

    #[error("bad magic in matrix file (expected SWAPMAT1)")]
    BadMagic,

    #[error("unsupported matrix file version {0}")]
    BadVersion(u32),

    #[error("matrix file payload is {actual} bytes, expected {expected}")]
    Truncated { expected: u64, actual: u64 },

    #[error("matrix dimensions {n} x {p} overflow the addressable size")]
    SizeOverflow { n: u64, p: u64 },

    #[error("weights file: {0}")]
    Weights(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("{0}")]
    Usage(String),
}

pub type Result<T> = std::result::Result<T, CliError>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
    let path = path.into();
    move |source| CliError::Io { path, source }
}
