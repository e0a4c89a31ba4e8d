use thiserror::Error;

use crate::dynamics::Epoch;

/// Errors raised anywhere in the detection pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid orbital elements: {0}")]
    InvalidElements(String),

    #[error("degenerate orbital frame: position and velocity are parallel")]
    DegenerateFrame,

    #[error("epoch mismatch: expected {expected}, found {found}")]
    EpochMismatch { expected: Epoch, found: Epoch },

    #[error("integration failed at t = {t:.6} s: {reason}")]
    Integration { t: f64, reason: String },

    #[error("target and observer coincide (zero range)")]
    ZeroRange,

    #[error("line of sight too close to the celestial pole for angular partials")]
    DegeneratePartials,

    #[error("singular matrix in {0}")]
    SingularMatrix(&'static str),

    #[error("covariance is not symmetric positive definite")]
    NonSpdCovariance,

    #[error("root finder did not converge on [{lo:e}, {hi:e}] (f = {f_lo:e} .. {f_hi:e})")]
    RootFinding {
        lo: f64,
        hi: f64,
        f_lo: f64,
        f_hi: f64,
    },

    #[error("least squares diverged after {iterations} iterations (wrms {wrms:.4})")]
    Divergence { iterations: usize, wrms: f64 },

    #[error("rank-deficient least squares problem ({0} independent directions)")]
    RankDeficient(usize),

    #[error("empty window: {0}")]
    EmptyWindow(String),

    #[error("epoch {0} is outside the available span")]
    OutOfSpan(Epoch),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
