use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("unsupported configuration: {0}")]
    Unsupported(String),
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("non-differentiable point: {0}")]
    NonDifferentiable(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("integration failed at particle {particle}: {reason}")]
    Integration { particle: usize, reason: String },
    #[error("flow diverged at step {step}: energy {energy}")]
    Diverged { step: usize, energy: f64 },
    #[error("infeasible separation: no valid spike layout after {attempts} attempts")]
    InfeasibleSeparation { attempts: usize },
    #[error("baseline diverged after {halvings} step halvings")]
    BaselineDiverged { halvings: usize },
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
