//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by the spectral, noise and integration layers.
#[derive(Debug, Clone, Error)]
pub enum CoreError {
    /// Two states (or a state and an operator) live on different bases.
    #[error("basis mismatch: {context} (left: cutoff {left_cutoff}, {left_len} modes; right: cutoff {right_cutoff}, {right_len} modes)")]
    BasisMismatch {
        context: &'static str,
        left_cutoff: u32,
        left_len: usize,
        right_cutoff: u32,
        right_len: usize,
    },

    /// A scalar or structural argument is outside its admissible range.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A covariance square-root inverse was requested on a mode with zero
    /// variance.
    #[error("zero variance on mode {mode} (lambda = {lambda}): covariance square root is not invertible there")]
    ZeroVariance { mode: usize, lambda: f64 },

    /// The time stepper produced a non-finite coefficient.
    #[error("integration failure at t = {t}: {reason}")]
    Integration { t: f64, reason: String },

    /// A gridded-function operation received an incompatible grid or shift.
    #[error("grid error: {0}")]
    Grid(String),

    /// A statistical routine received degenerate input.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Binary snapshot encoding or decoding failed.
    #[error("snapshot format error: {0}")]
    Snapshot(String),
}

impl CoreError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        CoreError::InvalidArgument(msg.into())
    }
}
