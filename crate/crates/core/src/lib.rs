//! Multiclass functional-gradient boosting over differentiable weak learners,
//! with subgrid selection for images, attention-based vocabulary pruning for
//! sequences, and residual-norm importance sampling.

pub mod attention;
pub mod boost;
pub mod data;
pub mod ensemble;
pub mod error;
pub mod learners;
pub mod line_search;
pub mod risk;
pub mod sampling;
pub mod seed;
pub mod subgrid;

pub use boost::{Booster, RoundContext, RoundHooks, RoundReport, Subset, Trained};
pub use data::{argmax, LabeledDataset, Matrix, Modality, Sample};
pub use ensemble::{Ensemble, FeatureView, Round, RoundKind};
pub use error::{CoreError, Result};
pub use learners::Learner;
pub use line_search::{line_search_alpha, LineSearch};
pub use risk::{compute_risk, compute_weights, BoostingWeights, RiskKind};
