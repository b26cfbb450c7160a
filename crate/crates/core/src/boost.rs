//! The generic boosting round shared by every algorithm variant.
//!
//! A round computes boosting weights at the current scores, asks its hooks
//! for a feature view, a sample subset and a trained learner, line-searches
//! the step and appends the learner. Algorithms differ only in their hooks.

use crate::data::{LabeledDataset, Matrix, Sample};
use crate::ensemble::{Ensemble, FeatureView, Round, RoundKind};
use crate::error::{CoreError, Result};
use crate::learners::Learner;
use crate::line_search::{line_search_alpha, LineSearch};
use crate::risk::{compute_risk, compute_weights, BoostingWeights, RiskKind};

/// Training samples of one round, with multiplicity, and the loss weight of
/// each entry.
#[derive(Clone, Debug, PartialEq)]
pub struct Subset {
    pub indices: Vec<usize>,
    pub loss_weights: Vec<f64>,
    /// Every sample exactly once, in order, with unit weights.
    pub exhaustive: bool,
}

impl Subset {
    pub fn all(n: usize) -> Self {
        Self { indices: (0..n).collect(), loss_weights: vec![1.0; n], exhaustive: true }
    }
}

/// Read-only state handed to the hooks of round `round`.
pub struct RoundContext<'a> {
    pub round: usize,
    pub data: &'a LabeledDataset,
    pub ensemble: &'a Ensemble,
    pub weights: &'a BoostingWeights,
    pub scores: &'a Matrix,
}

/// A trained candidate and its outputs on the training inputs it was given.
pub struct Trained {
    pub learner: Learner,
    pub outputs: Matrix,
    /// Outputs on the view of every training sample, when the trainer has
    /// already computed them. Saves a forward pass on sampled rounds.
    pub full_outputs: Option<Matrix>,
}

impl Trained {
    pub fn new(learner: Learner, outputs: Matrix) -> Self {
        Self { learner, outputs, full_outputs: None }
    }
}

pub trait RoundHooks {
    fn build_view(&mut self, ctx: &RoundContext<'_>) -> Result<FeatureView>;

    fn select_subset(&mut self, ctx: &RoundContext<'_>) -> Result<Subset>;

    /// Fits a learner to `targets` on `inputs` (the view of the selected
    /// samples) under the given per-entry loss weights.
    fn train(&mut self, ctx: &RoundContext<'_>, inputs: &[Sample], targets: &Matrix, loss_weights: &[f64]) -> Result<Trained>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundReport {
    pub round: usize,
    pub alpha: f64,
    pub train_risk: f64,
    pub subset_size: usize,
    pub view: FeatureView,
}

/// Ensemble under construction together with its cached training scores.
pub struct Booster<'d> {
    data: &'d LabeledDataset,
    ensemble: Ensemble,
    scores: Matrix,
    line_search: LineSearch,
}

impl<'d> Booster<'d> {
    pub fn new(data: &'d LabeledDataset, shrinkage: f64, risk: RiskKind, line_search: LineSearch) -> Result<Self> {
        Ok(Self {
            data,
            ensemble: Ensemble::new(data.classes(), shrinkage, risk)?,
            scores: Matrix::zeros(data.len(), data.classes()),
            line_search,
        })
    }

    pub fn ensemble(&self) -> &Ensemble {
        &self.ensemble
    }

    pub fn into_ensemble(self) -> Ensemble {
        self.ensemble
    }

    /// Current ensemble scores on the training set.
    pub fn scores(&self) -> &Matrix {
        &self.scores
    }

    pub fn train_risk(&self) -> Result<f64> {
        compute_risk(&self.scores, self.data.labels(), self.ensemble.risk())
    }

    /// The initial learner, fit to the weights at `f = 0` and added with
    /// coefficient 1, so that `f = g_0`.
    pub fn basic_round(&mut self, hooks: &mut impl RoundHooks) -> Result<RoundReport> {
        if !self.ensemble.is_empty() {
            return Err(CoreError::InvalidArgument("basic round must come first".into()));
        }
        self.round(hooks, RoundKind::Basic)
    }

    pub fn boost_round(&mut self, hooks: &mut impl RoundHooks) -> Result<RoundReport> {
        if self.ensemble.is_empty() {
            return Err(CoreError::InvalidArgument("boosting rounds need a basic round first".into()));
        }
        self.round(hooks, RoundKind::Additive)
    }

    fn round(&mut self, hooks: &mut impl RoundHooks, kind: RoundKind) -> Result<RoundReport> {
        let t = self.ensemble.len();
        let risk = self.ensemble.risk();
        let labels = self.data.labels();
        let weights = compute_weights(&self.scores, labels, risk)?;
        let ctx = RoundContext { round: t, data: self.data, ensemble: &self.ensemble, weights: &weights, scores: &self.scores };
        let view = hooks.build_view(&ctx)?;
        let subset = hooks.select_subset(&ctx)?;
        let n = self.data.len();
        if subset.indices.is_empty()
            || subset.indices.len() != subset.loss_weights.len()
            || subset.indices.iter().any(|&i| i >= n)
        {
            return Err(CoreError::InvalidArgument(format!("round {t}: malformed sample subset")));
        }
        let samples = self.data.samples();
        let inputs = subset
            .indices
            .iter()
            .map(|&i| view.apply(&samples[i], t).map(std::borrow::Cow::into_owned))
            .collect::<Result<Vec<_>>>()?;
        let targets = weights.matrix().select_rows(&subset.indices);
        let trained = hooks.train(&ctx, &inputs, &targets, &subset.loss_weights)?;
        let g = trained.outputs;
        if (g.rows(), g.cols()) != (subset.indices.len(), self.data.classes()) {
            return Err(CoreError::ExtentMismatch(format!("round {t}: learner outputs {}x{}", g.rows(), g.cols())));
        }
        if !g.is_finite() {
            return Err(CoreError::Diverged { epoch: 0, batch: 0 });
        }
        let alpha = match kind {
            RoundKind::Basic => 1.0,
            RoundKind::Additive if subset.exhaustive => {
                line_search_alpha(&self.scores, &g, labels, risk, None, &self.line_search)?
            }
            RoundKind::Additive => {
                let f = self.scores.select_rows(&subset.indices);
                let z: Vec<usize> = subset.indices.iter().map(|&i| labels[i]).collect();
                line_search_alpha(&f, &g, &z, risk, Some(&subset.loss_weights), &self.line_search)?
            }
        };
        let round = Round { alpha, kind, view, learner: trained.learner };
        let g_full = match trained.full_outputs {
            Some(full) if (full.rows(), full.cols()) == (n, self.data.classes()) && full.is_finite() => full,
            Some(_) => return Err(CoreError::ExtentMismatch(format!("round {t}: malformed full-set outputs"))),
            None if subset.exhaustive => g,
            None => round.learner.predict(&round.view.apply_all(samples, t)?)?,
        };
        let mut scores = self.scores.clone();
        let coef = match kind {
            RoundKind::Basic => alpha,
            RoundKind::Additive => self.ensemble.shrinkage() * alpha,
        };
        scores.axpy(coef, &g_full)?;
        let train_risk = compute_risk(&scores, labels, risk)?;
        let report = RoundReport { round: t, alpha, train_risk, subset_size: subset.indices.len(), view: round.view.clone() };
        self.ensemble.push(round)?;
        self.scores = scores;
        Ok(report)
    }
}
