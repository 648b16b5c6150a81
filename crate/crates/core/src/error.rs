use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    /// One or more configuration fields are invalid. Every problem found is listed.
    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),

    /// A scalar argument outside the domain of a formula.
    #[error("domain error: {0}")]
    Domain(String),

    /// Dimensions of the inputs disagree with each other or with the config.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Some tag's expected SINR is at or below its target, so the log barrier is undefined.
    #[error("barrier domain violated for tag {tag}: sinr {sinr} <= target {target}")]
    BarrierDomain { tag: usize, sinr: f64, target: f64 },

    /// The exact enumeration oracle was asked for more tags than it supports.
    #[error("exact expectation supports at most {max} tags, got {k}")]
    UnsupportedSize { k: usize, max: usize },

    /// A numerical solver failed to meet its contract.
    #[error("solver failure: {0}")]
    Solver(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {msg}")]
    Parse { path: PathBuf, msg: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
