//! The additive model `f(x) = sum_t c_t g_t(x^t)` and its checkpoint format.

use std::borrow::Cow;
use std::fs;
use std::path::Path;

use boostkit_nn::ParamStore;
use serde::{Deserialize, Serialize};

use crate::attention::{rewrite_sequence, Vocabulary};
use crate::data::{argmax, Matrix, Sample};
use crate::error::{CoreError, Result};
use crate::learners::{Learner, LearnerDescriptor};
use crate::risk::RiskKind;
use crate::subgrid::{apply_subgrid, SubgridMask};

/// The input transformation a round's learner was trained on.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "view", rename_all = "snake_case")]
pub enum FeatureView {
    Full,
    Subgrid { mask: SubgridMask },
    Vocabulary { vocab: Vocabulary },
}

impl FeatureView {
    pub fn apply<'a>(&self, sample: &'a Sample, round: usize) -> Result<Cow<'a, Sample>> {
        let mismatch = |reason: String| CoreError::ViewMismatch { round, reason };
        match (self, sample) {
            (FeatureView::Full, s) => Ok(Cow::Borrowed(s)),
            (FeatureView::Subgrid { mask }, Sample::Image(x)) => {
                let y = apply_subgrid(x, mask).map_err(|e| mismatch(e.to_string()))?;
                Ok(Cow::Owned(Sample::Image(y)))
            }
            (FeatureView::Vocabulary { vocab }, Sample::Sequence(t)) => {
                if t.first() != Some(&vocab.cls()) {
                    return Err(mismatch("sequence does not start with the classification token".into()));
                }
                Ok(Cow::Owned(Sample::Sequence(rewrite_sequence(t, vocab))))
            }
            (FeatureView::Subgrid { .. }, Sample::Sequence(_)) => Err(mismatch("subgrid view applied to a sequence".into())),
            (FeatureView::Vocabulary { .. }, Sample::Image(_)) => Err(mismatch("vocabulary view applied to an image".into())),
        }
    }

    pub fn apply_all(&self, samples: &[Sample], round: usize) -> Result<Vec<Sample>> {
        samples.iter().map(|s| self.apply(s, round).map(Cow::into_owned)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoundKind {
    /// The initial learner; contributes `alpha g` without shrinkage.
    Basic,
    /// A boosting step; contributes `nu alpha g`.
    Additive,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Round {
    pub alpha: f64,
    pub kind: RoundKind,
    pub view: FeatureView,
    pub learner: Learner,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    rounds: Vec<Round>,
    shrinkage: f64,
    risk: RiskKind,
    classes: usize,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    classes: usize,
    shrinkage: f64,
    risk: RiskKind,
    rounds: Vec<RoundEntry>,
}

#[derive(Serialize, Deserialize)]
struct RoundEntry {
    alpha: f64,
    kind: RoundKind,
    #[serde(flatten)]
    view: FeatureView,
    learner: LearnerDescriptor,
    params: String,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl Ensemble {
    pub fn new(classes: usize, shrinkage: f64, risk: RiskKind) -> Result<Self> {
        if !(0.0..=1.0).contains(&shrinkage) {
            return Err(CoreError::InvalidArgument(format!("shrinkage must lie in [0, 1], got {shrinkage}")));
        }
        if classes < 2 {
            return Err(CoreError::InvalidArgument(format!("need at least two classes, got {classes}")));
        }
        Ok(Self { rounds: Vec::new(), shrinkage, risk, classes })
    }

    pub fn rounds(&self) -> &[Round] {
        &self.rounds
    }

    pub fn len(&self) -> usize {
        self.rounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rounds.is_empty()
    }

    pub fn shrinkage(&self) -> f64 {
        self.shrinkage
    }

    pub fn risk(&self) -> RiskKind {
        self.risk
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn last(&self) -> Option<&Round> {
        self.rounds.last()
    }

    /// Effective coefficient of round `t` in the sum.
    pub fn coefficient(&self, t: usize) -> f64 {
        let r = &self.rounds[t];
        match r.kind {
            RoundKind::Basic => r.alpha,
            RoundKind::Additive => self.shrinkage * r.alpha,
        }
    }

    pub fn push(&mut self, round: Round) -> Result<()> {
        if round.learner.classes() != self.classes {
            return Err(CoreError::ExtentMismatch(format!(
                "{}-class learner in a {}-class ensemble",
                round.learner.classes(),
                self.classes
            )));
        }
        if !round.alpha.is_finite() {
            return Err(CoreError::InvalidArgument(format!("non-finite coefficient {}", round.alpha)));
        }
        self.rounds.push(round);
        Ok(())
    }

    /// Output of round `t`'s learner on its own view of every sample.
    pub fn round_outputs(&self, t: usize, samples: &[Sample]) -> Result<Matrix> {
        let r = &self.rounds[t];
        let view = r.view.apply_all(samples, t)?;
        r.learner.predict(&view)
    }

    pub fn predict_batch(&self, samples: &[Sample]) -> Result<Matrix> {
        let mut f = Matrix::zeros(samples.len(), self.classes);
        for t in 0..self.rounds.len() {
            let g = self.round_outputs(t, samples)?;
            f.axpy(self.coefficient(t), &g)?;
        }
        Ok(f)
    }

    pub fn predict(&self, sample: &Sample) -> Result<Vec<f64>> {
        Ok(self.predict_batch(std::slice::from_ref(sample))?.row(0).to_vec())
    }

    /// Lowest class index wins ties.
    pub fn predict_label(&self, sample: &Sample) -> Result<usize> {
        Ok(argmax(&self.predict(sample)?))
    }

    /// Writes `manifest.json` and one parameter checkpoint per round into
    /// `dir`, creating it if needed.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mut rounds = Vec::with_capacity(self.rounds.len());
        for (t, r) in self.rounds.iter().enumerate() {
            let file = format!("round_{t:03}.bkpt");
            r.learner.params()?.save(dir.join(&file))?;
            rounds.push(RoundEntry {
                alpha: r.alpha,
                kind: r.kind,
                view: r.view.clone(),
                learner: r.learner.descriptor(),
                params: file,
            });
        }
        let manifest = Manifest { classes: self.classes, shrinkage: self.shrinkage, risk: self.risk, rounds };
        fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
        let mut e = Ensemble::new(manifest.classes, manifest.shrinkage, manifest.risk)?;
        for r in manifest.rounds {
            if r.params.contains(['/', '\\']) {
                return Err(CoreError::InvalidArgument(format!("parameter file `{}` must be a bare name", r.params)));
            }
            let params = ParamStore::load(dir.join(&r.params))?;
            let learner = Learner::from_checkpoint(&r.learner, params)?;
            e.push(Round { alpha: r.alpha, kind: r.kind, view: r.view, learner })?;
        }
        Ok(e)
    }
}
