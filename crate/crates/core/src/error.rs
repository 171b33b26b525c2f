//! Error taxonomy shared by every pipeline stage.
//!
//! The CLI maps these onto exit codes: `Config` → 2, `Data` → 3,
//! `Numerical` → 4, everything else → 1.

use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum VoltaError {
    /// A configuration value is missing, malformed, or inconsistent.
    #[error("config error: {0}")]
    Config(String),

    /// Input data is missing or malformed.
    #[error("data error: {0}")]
    Data(String),

    /// A referenced file is absent or unreadable.
    #[error("data error: {path}: {reason}")]
    File { path: PathBuf, reason: String },

    /// Training or inference produced a non-finite value.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A caller violated an operation's contract (shape mismatch, k > n, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl VoltaError {
    /// Process exit code for the CLI surface.
    pub fn exit_code(&self) -> i32 {
        match self {
            VoltaError::Config(_) => 2,
            VoltaError::Data(_) | VoltaError::File { .. } => 3,
            VoltaError::Numerical(_) => 4,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, VoltaError>;

pub(crate) fn config_err(msg: impl Into<String>) -> VoltaError {
    VoltaError::Config(msg.into())
}

pub(crate) fn data_err(msg: impl Into<String>) -> VoltaError {
    VoltaError::Data(msg.into())
}

pub(crate) fn contract_err(msg: impl Into<String>) -> VoltaError {
    VoltaError::Contract(msg.into())
}
