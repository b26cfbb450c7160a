//! Weak learners: a small CNN with a separable classifier head, an encoder
//! transformer, and closed-form linear/constant learners.

pub mod cnn;
pub mod linear;
pub mod train;
pub mod transformer;

use boostkit_nn::{Bound, EncoderConfig, Graph, ParamStore, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::data::{Matrix, Sample};
use crate::error::{CoreError, Result};

pub use cnn::{build_probe_model, new_head, CnnShape, CnnWeakLearner, ProbeModel};
pub use linear::{ConstantLearner, LinearLearner};
pub use train::{fit_to_weights, train_classifier, train_to_weights, Schedule, TrainConfig, TrainOutcome};
pub use transformer::{transfer_transformer, TransformerWeakLearner};

const PREDICT_BATCH: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub enum Learner {
    Cnn(CnnWeakLearner),
    Transformer(TransformerWeakLearner),
    Linear(LinearLearner),
    Constant(ConstantLearner),
}

/// Architecture metadata stored next to a learner's parameters.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum LearnerDescriptor {
    Cnn { in_channels: usize, conv1: usize, conv2: usize, classes: usize, grid: (usize, usize) },
    Transformer {
        vocab_size: usize,
        max_len: usize,
        width: usize,
        heads: usize,
        layers: usize,
        ffn_width: usize,
        classes: usize,
        cls_token: u32,
    },
    Linear { dim: usize, classes: usize },
    Constant { classes: usize },
}

fn merge<'a>(stores: impl IntoIterator<Item = &'a ParamStore>) -> Result<ParamStore> {
    let mut out = ParamStore::new();
    for s in stores {
        for (name, t) in s.iter() {
            out.insert(name, t.clone())?;
        }
    }
    Ok(out)
}

impl Learner {
    pub fn classes(&self) -> usize {
        match self {
            Learner::Cnn(l) => l.shape().classes,
            Learner::Transformer(l) => l.config().classes,
            Learner::Linear(l) => l.classes(),
            Learner::Constant(l) => l.classes(),
        }
    }

    pub fn descriptor(&self) -> LearnerDescriptor {
        match self {
            Learner::Cnn(l) => {
                let s = l.shape();
                LearnerDescriptor::Cnn {
                    in_channels: s.in_channels,
                    conv1: s.conv1,
                    conv2: s.conv2,
                    classes: s.classes,
                    grid: l.grid(),
                }
            }
            Learner::Transformer(l) => {
                let c = l.config();
                LearnerDescriptor::Transformer {
                    vocab_size: c.vocab_size,
                    max_len: c.max_len,
                    width: c.width,
                    heads: c.heads,
                    layers: c.layers,
                    ffn_width: c.ffn_width,
                    classes: c.classes,
                    cls_token: c.cls_token,
                }
            }
            Learner::Linear(l) => LearnerDescriptor::Linear { dim: l.dim(), classes: l.classes() },
            Learner::Constant(l) => LearnerDescriptor::Constant { classes: l.classes() },
        }
    }

    /// Every parameter in one store, for checkpointing.
    pub fn params(&self) -> Result<ParamStore> {
        merge(self.stores())
    }

    pub fn from_checkpoint(desc: &LearnerDescriptor, params: ParamStore) -> Result<Self> {
        Ok(match *desc {
            LearnerDescriptor::Cnn { in_channels, conv1, conv2, classes, grid } => {
                let shape = CnnShape { in_channels, conv1, conv2, classes };
                Learner::Cnn(CnnWeakLearner::from_parts(shape, grid, params.subset("conv"), params.subset("head."))?)
            }
            LearnerDescriptor::Transformer { vocab_size, max_len, width, heads, layers, ffn_width, classes, cls_token } => {
                let cfg = EncoderConfig { vocab_size, max_len, width, heads, layers, ffn_width, classes, cls_token };
                Learner::Transformer(TransformerWeakLearner::from_parts(cfg, params)?)
            }
            LearnerDescriptor::Linear { dim, classes } => Learner::Linear(LinearLearner::from_parts(dim, classes, params)?),
            LearnerDescriptor::Constant { classes } => {
                let l = ConstantLearner::from_parts(params)?;
                if l.classes() != classes {
                    return Err(CoreError::ExtentMismatch(format!("constant of width {} declared as {classes}", l.classes())));
                }
                Learner::Constant(l)
            }
        })
    }

    pub(crate) fn stores(&self) -> Vec<&ParamStore> {
        match self {
            Learner::Cnn(l) => l.stores().to_vec(),
            Learner::Transformer(l) => l.stores().to_vec(),
            Learner::Linear(l) => l.stores().to_vec(),
            Learner::Constant(l) => l.stores().to_vec(),
        }
    }

    pub(crate) fn stores_mut(&mut self) -> Vec<&mut ParamStore> {
        match self {
            Learner::Cnn(l) => l.stores_mut().into_iter().collect(),
            Learner::Transformer(l) => l.stores_mut().into_iter().collect(),
            Learner::Linear(l) => l.stores_mut().into_iter().collect(),
            Learner::Constant(l) => l.stores_mut().into_iter().collect(),
        }
    }

    /// `[B,M]` outputs for a batch, with `bound` aligned to [`Self::stores`].
    pub fn forward(&self, g: &mut Graph, bound: &[Bound<'_>], batch: &[&Sample]) -> Result<Var> {
        if batch.is_empty() {
            return Err(CoreError::InvalidArgument("empty batch".into()));
        }
        match self {
            Learner::Cnn(l) => {
                let images = batch
                    .iter()
                    .map(|s| s.as_image().ok_or_else(|| CoreError::InvalidArgument("CNN learner given a sequence".into())))
                    .collect::<Result<Vec<&Tensor>>>()?;
                l.forward(g, bound, &images)
            }
            Learner::Transformer(l) => {
                let seqs = batch
                    .iter()
                    .map(|s| s.as_tokens().ok_or_else(|| CoreError::InvalidArgument("transformer learner given an image".into())))
                    .collect::<Result<Vec<&[u32]>>>()?;
                l.forward(g, bound, &seqs)
            }
            Learner::Linear(l) => l.forward(g, bound, batch),
            Learner::Constant(l) => Ok(l.forward(g, bound, batch.len())),
        }
    }

    /// Outputs on every sample, one row each.
    pub fn predict(&self, samples: &[Sample]) -> Result<Matrix> {
        let m = self.classes();
        let mut out = Vec::with_capacity(samples.len() * m);
        for chunk in samples.chunks(PREDICT_BATCH) {
            let mut g = Graph::new();
            let bound: Vec<Bound<'_>> = self.stores().into_iter().map(|s| g.bind(s, false)).collect();
            let batch: Vec<&Sample> = chunk.iter().collect();
            let y = self.forward(&mut g, &bound, &batch)?;
            out.extend_from_slice(g.data(y));
        }
        Matrix::new(samples.len(), m, out)
    }
}
