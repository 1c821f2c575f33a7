use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum NetsimError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("loss diverged at step {step} (loss {loss:.3e})")]
    DivergedLoss { step: usize, loss: f64 },

    #[error("zero input vector")]
    ZeroInput,

    #[error("finite-difference step too small: halving h changed the estimate by {rel_change:.3e} (noise floor)")]
    StepTooSmall { rel_change: f64 },

    #[error("network too large for dense gradients: {params} parameters (cap {cap})")]
    TooManyParameters { params: usize, cap: usize },

    #[error(transparent)]
    Core(#[from] widthlab_core::CoreError),
}
