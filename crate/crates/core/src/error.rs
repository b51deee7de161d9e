use thiserror::Error;

/// Errors produced by the simulation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("coherent amplitude too large for truncation: |beta|^2 = {beta_sq:.3} exceeds n_fock/4 = {bound:.3}")]
    TruncationBound { beta_sq: f64, bound: f64 },

    #[error("trace drift {drift:.3e} in a single step at step {step}; reduce dt")]
    TraceDrift { step: usize, drift: f64 },

    #[error("backward propagation blew up at step {step}: norm growth factor {growth:.3e}")]
    BackwardBlowup { step: usize, growth: f64 },

    #[error("record/phase mismatch: {0}")]
    RecordMismatch(String),

    #[error("integration window is empty or out of range: {0}")]
    EmptyWindow(String),

    #[error("all four retrodiction weights vanished; no outcome can be inferred")]
    DegenerateRetrodiction,

    #[error("config error at line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("root bracketing failed: {0}")]
    NoBracket(String),
}

pub type Result<T> = std::result::Result<T, Error>;
