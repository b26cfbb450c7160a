//! Encoder-only transformer weak learner with attention capture.

use boostkit_nn::{encoder_forward, encoder_logits, init_encoder, AttentionTrace, Bound, EncoderConfig, Graph, ParamStore, Var};

use crate::error::{CoreError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TransformerWeakLearner {
    cfg: EncoderConfig,
    params: ParamStore,
}

impl TransformerWeakLearner {
    pub fn new(cfg: EncoderConfig, seed: u64) -> Result<Self> {
        Ok(Self { params: init_encoder(&cfg, seed)?, cfg })
    }

    pub fn from_parts(cfg: EncoderConfig, params: ParamStore) -> Result<Self> {
        cfg.validate()?;
        let reference = init_encoder(&cfg, 0)?;
        for (name, t) in reference.iter() {
            match params.get(name) {
                Some(p) if p.shape() == t.shape() => {}
                _ => return Err(CoreError::ExtentMismatch(format!("encoder parameter `{name}` missing or mis-shaped"))),
            }
        }
        if params.len() != reference.len() {
            return Err(CoreError::ExtentMismatch("encoder checkpoint has extra parameters".into()));
        }
        Ok(Self { cfg, params })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    /// Logits and attention maps for one sequence.
    pub fn trace(&self, tokens: &[u32]) -> Result<(Vec<f64>, AttentionTrace)> {
        Ok(encoder_logits(&self.params, &self.cfg, tokens)?)
    }

    pub(crate) fn stores(&self) -> [&ParamStore; 1] {
        [&self.params]
    }

    pub(crate) fn stores_mut(&mut self) -> [&mut ParamStore; 1] {
        [&mut self.params]
    }

    /// One graph node per sequence, stacked to `[B,M]`.
    pub(crate) fn forward(&self, g: &mut Graph, bound: &[Bound<'_>], batch: &[&[u32]]) -> Result<Var> {
        let mut rows = Vec::with_capacity(batch.len());
        for tokens in batch {
            rows.push(encoder_forward(g, &bound[0], &self.cfg, tokens)?.0);
        }
        Ok(if rows.len() == 1 { rows[0] } else { g.concat_rows(&rows) })
    }
}

/// Warm start: a deep copy of every parameter of `source` with fresh
/// optimizer state. The target configuration must match.
pub fn transfer_transformer(source: &TransformerWeakLearner, cfg: &EncoderConfig) -> Result<TransformerWeakLearner> {
    if source.cfg != *cfg {
        return Err(CoreError::InvalidArgument(format!("cannot warm start {cfg:?} from {:?}", source.cfg)));
    }
    let mut params = source.params.clone();
    params.reset_state();
    Ok(TransformerWeakLearner { cfg: *cfg, params })
}
