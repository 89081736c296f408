use thiserror::Error;

/// Errors produced by the simulation, estimation, and benchmark layers.
#[derive(Debug, Error)]
pub enum MtllError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("non-finite {what} at step {step}")]
    NonFinite { step: usize, what: &'static str },

    #[error("explicit step unstable: {0}")]
    Unstable(String),

    #[error("invalid initialization: {0}")]
    InvalidInit(String),

    #[error("degenerate ensemble: all particle weights vanished")]
    DegenerateEnsemble,

    #[error("no feasible lattice path")]
    NoFeasiblePath,

    #[error("filter diverged: {0}")]
    Divergence(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, MtllError>;
