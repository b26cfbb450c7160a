use thiserror::Error;

use boostkit_nn::NnError;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("label {label} of sample {sample} is outside 0..{classes}")]
    LabelOutOfRange { sample: usize, label: usize, classes: usize },
    #[error("non-finite score for sample {sample}")]
    NonFiniteScore { sample: usize },
    #[error("non-finite risk at alpha = {alpha}")]
    NonFiniteRisk { alpha: f64 },
    #[error("converged residuals: every boosting weight row is zero")]
    ConvergedResiduals,
    #[error("distribution assigns zero mass to sample {sample} with nonzero residual")]
    InfiniteVariance { sample: usize },
    #[error("round {round}: {reason}")]
    ViewMismatch { round: usize, reason: String },
    #[error("extent mismatch: {0}")]
    ExtentMismatch(String),
    #[error("training diverged at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },
    #[error("dataset: {0}")]
    Dataset(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("manifest: {0}")]
    Manifest(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;
