use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("structural error: {0}")]
    Structural(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("environment window too short: {need} extra layers needed {side}")]
    NeedsWiderWindow { need: usize, side: &'static str },

    #[error("site ({layer},{rung}) is at the window edge; widen the window")]
    Boundary { layer: i64, rung: usize },

    #[error("ellipticity violation: {0}")]
    Ellipticity(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("contraction failure: fitted theta = {theta}")]
    ContractionFailure { theta: f64 },

    #[error("max_steps = {max_steps} exceeded before hitting layer {target}")]
    Timeout { max_steps: u64, target: i64 },

    #[error("out of regime: {0}")]
    OutOfRegime(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),
}

pub type Result<T> = std::result::Result<T, Error>;
