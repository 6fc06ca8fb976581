use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: expected {expected}x{expected}, found {rows}x{cols}")]
    Shape {
        expected: usize,
        rows: usize,
        cols: usize,
    },

    #[error("invalid density matrix: {0}")]
    InvalidState(String),

    #[error("integration failure at t = {time:.6e} s: {reason}")]
    Integration { time: f64, reason: String },

    #[error(
        "Fock truncation n_max = {n_max} insufficient: top-level population {population:.3e} at t = {time:.6e} s"
    )]
    Truncation {
        n_max: usize,
        population: f64,
        time: f64,
    },

    #[error("sampling step {dt:.3e} s cannot resolve +/-{f_span:.3e} Hz (Nyquist)")]
    Nyquist { dt: f64, f_span: f64 },

    #[error("not enough data: need at least {needed} points, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("mean frequency undefined: total photon number {0:.3e} below floor")]
    UndefinedMean(f64),

    #[error("root finding did not converge: {0}")]
    NonConvergence(String),
}
