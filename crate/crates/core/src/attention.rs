//! Attention-based token importance and vocabulary pruning for sequence
//! learners.
//!
//! Positions are 0-based and position 0 holds the classification token.

use std::collections::{BTreeMap, BTreeSet};

use boostkit_nn::AttentionTrace;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::subgrid::keep_count;

/// How per-head attention maps are reduced to one map per layer.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadReduction {
    #[default]
    Mean,
    Max,
}

fn attn(trace: &AttentionTrace, layer: usize, query: usize, key: usize, red: HeadReduction) -> f64 {
    match red {
        HeadReduction::Mean => trace.head_mean(layer, query, key),
        HeadReduction::Max => trace.head_max(layer, query, key),
    }
}

fn check_position(trace: &AttentionTrace, p: usize) -> Result<()> {
    if p >= trace.seq_len() {
        return Err(CoreError::InvalidArgument(format!("position {p} outside sequence of length {}", trace.seq_len())));
    }
    Ok(())
}

/// Final-layer attention from position `p` to the classification position.
pub fn self_importance(trace: &AttentionTrace, p: usize, red: HeadReduction) -> Result<f64> {
    check_position(trace, p)?;
    Ok(attn(trace, trace.layers() - 1, p, 0, red))
}

/// The unapproximated self-importance: the product of `p`'s attention to
/// itself over every layer but the last, times the final-layer attention to
/// the classification position. Diagnostic only.
pub fn self_importance_full(trace: &AttentionTrace, p: usize, red: HeadReduction) -> Result<f64> {
    check_position(trace, p)?;
    let last = trace.layers() - 1;
    let diag: f64 = (0..last).map(|k| attn(trace, k, p, p, red)).product();
    Ok(diag * attn(trace, last, p, 0, red))
}

/// Greedy max-attention path from `p` through every layer but the last,
/// avoiding `p` itself, closed by the final-layer attention of the path's end
/// to the classification position. Ties go to the lower position.
pub fn rest_importance(trace: &AttentionTrace, p: usize, red: HeadReduction) -> Result<f64> {
    check_position(trace, p)?;
    let s = trace.seq_len();
    if s < 2 {
        return Err(CoreError::InvalidArgument("rest importance needs at least one token besides the classification token".into()));
    }
    if trace.layers() < 2 {
        return Err(CoreError::InvalidArgument("rest importance is undefined for single-layer learners".into()));
    }
    let last = trace.layers() - 1;
    let mut cur = p;
    let mut prod = 1.0;
    for k in 0..last {
        let mut best: Option<(usize, f64)> = None;
        for j in (0..s).filter(|&j| j != p) {
            let a = attn(trace, k, cur, j, red);
            if best.is_none_or(|(_, b)| a > b) {
                best = Some((j, a));
            }
        }
        let (j, a) = best.expect("s >= 2");
        prod *= a;
        cur = j;
    }
    Ok(prod * attn(trace, last, cur, 0, red))
}

/// Summed `I^S + I^R` per token id over every occurrence in a corpus. The
/// classification token is never scored.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TokenImportance {
    scores: BTreeMap<u32, f64>,
}

impl TokenImportance {
    pub fn get(&self, token: u32) -> Option<f64> {
        self.scores.get(&token).copied()
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.scores.iter().map(|(&t, &s)| (t, s))
    }

    pub fn add(&mut self, token: u32, value: f64) {
        *self.scores.entry(token).or_insert(0.0) += value;
    }
}

/// Scores every non-classification occurrence of every sequence, given the
/// trace the scoring learner produced on that sequence.
pub fn aggregate_vocab<'a>(
    corpus: impl IntoIterator<Item = (&'a [u32], &'a AttentionTrace)>,
    cls: u32,
    red: HeadReduction,
) -> Result<TokenImportance> {
    let mut out = TokenImportance::default();
    for (tokens, trace) in corpus {
        if trace.seq_len() != tokens.len() {
            return Err(CoreError::ExtentMismatch(format!(
                "trace over {} positions for a sequence of {}",
                trace.seq_len(),
                tokens.len()
            )));
        }
        for (p, &t) in tokens.iter().enumerate() {
            if t == cls {
                continue;
            }
            out.add(t, self_importance(trace, p, red)? + rest_importance(trace, p, red)?);
        }
    }
    Ok(out)
}

/// Retained token ids after round `round`. Always contains the
/// classification token.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: BTreeSet<u32>,
    cls: u32,
    round: usize,
}

impl Vocabulary {
    pub fn new(tokens: impl IntoIterator<Item = u32>, cls: u32, round: usize) -> Self {
        let mut tokens: BTreeSet<u32> = tokens.into_iter().collect();
        tokens.insert(cls);
        Self { tokens, cls, round }
    }

    pub fn contains(&self, t: u32) -> bool {
        self.tokens.contains(&t)
    }

    pub fn tokens(&self) -> &BTreeSet<u32> {
        &self.tokens
    }

    pub fn cls(&self) -> u32 {
        self.cls
    }

    pub fn round(&self) -> usize {
        self.round
    }

    /// Number of retained tokens including the classification token.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Retained tokens other than the classification token.
    pub fn content_len(&self) -> usize {
        self.tokens.len() - 1
    }
}

/// Keeps the `ceil(sigma k)` best-scored of the `k` non-classification tokens
/// of `previous`; unscored tokens count as 0 and ties go to the lower id.
pub fn prune_vocab(scores: &TokenImportance, previous: &Vocabulary, sigma: f64) -> Result<Vocabulary> {
    if !(sigma > 0.0 && sigma <= 1.0) {
        return Err(CoreError::InvalidArgument(format!("keep fraction must lie in (0, 1], got {sigma}")));
    }
    let mut cand: Vec<(u32, f64)> =
        previous.tokens.iter().filter(|&&t| t != previous.cls).map(|&t| (t, scores.get(t).unwrap_or(0.0))).collect();
    let keep = if cand.is_empty() { 0 } else { keep_count(sigma, cand.len()) };
    cand.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    cand.truncate(keep);
    Ok(Vocabulary::new(cand.into_iter().map(|(t, _)| t), previous.cls, previous.round + 1))
}

/// Drops tokens outside `vocab`, preserving order. The leading classification
/// token always survives.
pub fn rewrite_sequence(tokens: &[u32], vocab: &Vocabulary) -> Vec<u32> {
    tokens.iter().copied().filter(|&t| vocab.contains(t)).collect()
}
