use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("vocabulary size must be at least 2, got {0}")]
    InvalidVocab(usize),

    #[error("token id {token} out of range for vocabulary of size {vocab}")]
    TokenOutOfRange { token: u32, vocab: usize },

    #[error("sequence length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("operation requires at least one masked position")]
    NoMaskedPositions,

    #[error("probability matrix violates denoiser constraints at row {row}: {reason}")]
    Constraint { row: usize, reason: String },

    #[error("brute-force enumeration refused: {completions} completions exceeds guard {guard}")]
    GuardExceeded { completions: f64, guard: f64 },

    #[error("non-finite particle weight at step {step}, particle {particle}: log-weight {log_weight}")]
    NonFiniteWeights {
        step: usize,
        particle: usize,
        log_weight: f64,
    },

    #[error("non-finite score {score} for candidate at level {level}")]
    NonFiniteScore { level: usize, score: f64 },

    /// Failure inside an external denoiser or reward backend.
    #[error("backend error: {0}")]
    Backend(#[source] Box<dyn std::error::Error + Send + Sync>),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
