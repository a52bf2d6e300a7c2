//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid polarization state: {0}")]
    InvalidState(String),

    #[error("degree of polarization undefined: total power is zero")]
    UndefinedDop,

    #[error("ensemble is empty")]
    EmptyEnsemble,

    #[error("polarized part is zero: {0}")]
    ZeroPolarized(String),

    #[error("invalid spectrum: {0}")]
    InvalidSpectrum(String),

    #[error("unsupported PRBS order {0}, supported range is 7..=31")]
    UnsupportedPrbsOrder(u32),

    #[error("state {state} is outside the configured basis set {set}")]
    StateOutsideBasisSet { state: String, set: String },

    #[error("frame synchronization failed: {0}")]
    SyncFailure(String),

    #[error("empty sifted key")]
    EmptySiftedKey,

    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Single-field config error.
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(vec![msg.into()])
    }
}
