//! BERT-style encoder classifier: learned token and position embeddings,
//! post-norm encoder layers, and a linear head on the first position.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{NnError, Result};
use crate::graph::{Bound, Graph, Var};
use crate::init::{fan_in_uniform, uniform};
use crate::params::ParamStore;
use crate::tensor::Tensor;

const LN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub max_len: usize,
    pub width: usize,
    pub heads: usize,
    pub layers: usize,
    pub ffn_width: usize,
    pub classes: usize,
    pub cls_token: u32,
}

impl EncoderConfig {
    /// Two layers, two heads, width 32.
    pub fn small(vocab_size: usize, classes: usize) -> Self {
        Self { vocab_size, max_len: 128, width: 32, heads: 2, layers: 2, ffn_width: 64, classes, cls_token: 0 }
    }

    pub fn head_width(&self) -> usize {
        self.width / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || !self.width.is_multiple_of(self.heads) {
            return Err(NnError::Shape(format!("width {} not divisible into {} heads", self.width, self.heads)));
        }
        if self.layers == 0 || self.vocab_size == 0 || self.classes == 0 || self.max_len == 0 || self.ffn_width == 0 {
            return Err(NnError::Shape("encoder extents must be positive".into()));
        }
        if self.cls_token as usize >= self.vocab_size {
            return Err(NnError::Shape("classification token outside vocabulary".into()));
        }
        Ok(())
    }
}

/// Softmax attention maps of one forward pass, indexed
/// `[layer][head][query][key]` with all indices 0-based.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionTrace {
    layers: usize,
    heads: usize,
    len: usize,
    data: Vec<f64>,
}

impl AttentionTrace {
    pub fn new(layers: usize, heads: usize, len: usize, data: Vec<f64>) -> Result<Self> {
        if layers == 0 || heads == 0 || len == 0 || data.len() != layers * heads * len * len {
            return Err(NnError::Shape(format!(
                "trace of {} values does not match {layers} layers x {heads} heads x {len}^2",
                data.len()
            )));
        }
        for row in data.chunks(len) {
            let s: f64 = row.iter().sum();
            if row.iter().any(|&a| a < 0.0 || !a.is_finite()) || (s - 1.0).abs() > 1e-9 {
                return Err(NnError::Shape("attention rows must be distributions".into()));
            }
        }
        Ok(Self { layers, heads, len, data })
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn seq_len(&self) -> usize {
        self.len
    }

    pub fn row(&self, layer: usize, head: usize, query: usize) -> &[f64] {
        let off = ((layer * self.heads + head) * self.len + query) * self.len;
        &self.data[off..off + self.len]
    }

    pub fn get(&self, layer: usize, head: usize, query: usize, key: usize) -> f64 {
        self.row(layer, head, query)[key]
    }

    pub fn head_mean(&self, layer: usize, query: usize, key: usize) -> f64 {
        (0..self.heads).map(|h| self.get(layer, h, query, key)).sum::<f64>() / self.heads as f64
    }

    pub fn head_max(&self, layer: usize, query: usize, key: usize) -> f64 {
        (0..self.heads).map(|h| self.get(layer, h, query, key)).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

pub fn init_encoder(cfg: &EncoderConfig, seed: u64) -> Result<ParamStore> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (d, f) = (cfg.width, cfg.ffn_width);
    let mut s = ParamStore::new();
    s.insert("tok_emb", uniform(&[cfg.vocab_size, d], 0.5, &mut rng))?;
    s.insert("pos_emb", uniform(&[cfg.max_len, d], 0.5, &mut rng))?;
    for l in 0..cfg.layers {
        for proj in ["q", "k", "v", "o"] {
            s.insert(format!("l{l}.w{proj}"), fan_in_uniform(&[d, d], d, &mut rng))?;
            s.insert(format!("l{l}.b{proj}"), fan_in_uniform(&[d], d, &mut rng))?;
        }
        s.insert(format!("l{l}.ln1.g"), Tensor::filled(&[d], 1.0))?;
        s.insert(format!("l{l}.ln1.b"), Tensor::zeros(&[d]))?;
        s.insert(format!("l{l}.ff1.w"), fan_in_uniform(&[f, d], d, &mut rng))?;
        s.insert(format!("l{l}.ff1.b"), fan_in_uniform(&[f], d, &mut rng))?;
        s.insert(format!("l{l}.ff2.w"), fan_in_uniform(&[d, f], f, &mut rng))?;
        s.insert(format!("l{l}.ff2.b"), fan_in_uniform(&[d], f, &mut rng))?;
        s.insert(format!("l{l}.ln2.g"), Tensor::filled(&[d], 1.0))?;
        s.insert(format!("l{l}.ln2.b"), Tensor::zeros(&[d]))?;
    }
    s.insert("head.w", fan_in_uniform(&[cfg.classes, d], d, &mut rng))?;
    s.insert("head.b", fan_in_uniform(&[cfg.classes], d, &mut rng))?;
    Ok(s)
}

pub fn check_tokens(cfg: &EncoderConfig, tokens: &[u32]) -> Result<()> {
    let first = *tokens.first().ok_or(NnError::EmptySequence)?;
    if first != cfg.cls_token {
        return Err(NnError::MissingClassToken { expected: cfg.cls_token, found: first });
    }
    if tokens.len() > cfg.max_len {
        return Err(NnError::SequenceTooLong { len: tokens.len(), max: cfg.max_len });
    }
    if let Some((position, &id)) = tokens.iter().enumerate().find(|(_, &t)| t as usize >= cfg.vocab_size) {
        return Err(NnError::TokenOutOfRange { id, position, vocab: cfg.vocab_size });
    }
    Ok(())
}

/// Projection weights of one attention block; each `w*` is [D,D], each `b*` is [D].
#[derive(Clone, Copy, Debug)]
pub struct AttentionVars {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
}

impl AttentionVars {
    pub fn from_bound(p: &Bound<'_>, prefix: &str) -> Self {
        let v = |n: &str| p.get(&format!("{prefix}.{n}"));
        Self { wq: v("wq"), bq: v("bq"), wk: v("wk"), bk: v("bk"), wv: v("wv"), bv: v("bv"), wo: v("wo"), bo: v("bo") }
    }
}

/// Multi-head self-attention over `x` [s,D]; pushes each head's attention map
/// (row-major [s,s]) onto `maps`.
pub fn multi_head_attention(g: &mut Graph, w: &AttentionVars, x: Var, heads: usize, maps: &mut Vec<Var>) -> Var {
    let d = g.shape(x)[1];
    assert_eq!(d % heads, 0, "contract violation: width {d} not divisible by {heads} heads");
    let dh = d / heads;
    let q = g.linear(x, w.wq, w.bq);
    let k = g.linear(x, w.wk, w.bk);
    let v = g.linear(x, w.wv, w.bv);
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            let (a, b) = (h * dh, (h + 1) * dh);
            (g.slice_cols(q, a, b), g.slice_cols(k, a, b), g.slice_cols(v, a, b))
        };
        let scores = g.matmul_nt(qh, kh);
        let scores = g.scale(scores, 1.0 / (dh as f64).sqrt());
        let attn = g.softmax(scores);
        maps.push(attn);
        outs.push(g.matmul(attn, vh));
    }
    let o = if heads == 1 { outs[0] } else { g.concat_cols(&outs) };
    g.linear(o, w.wo, w.bo)
}

/// Forward pass of one sequence. Returns logits as a [1,M] node and the
/// attention trace of every layer and head.
pub fn encoder_forward(
    g: &mut Graph,
    p: &Bound<'_>,
    cfg: &EncoderConfig,
    tokens: &[u32],
) -> Result<(Var, AttentionTrace)> {
    check_tokens(cfg, tokens)?;
    let s = tokens.len();
    let ids: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
    let positions: Vec<usize> = (0..s).collect();
    let te = g.embedding(p.get("tok_emb"), &ids);
    let pe = g.embedding(p.get("pos_emb"), &positions);
    let mut x = g.add(te, pe);
    let mut maps = Vec::with_capacity(cfg.layers * cfg.heads);
    for l in 0..cfg.layers {
        let prefix = format!("l{l}");
        let attn = multi_head_attention(g, &AttentionVars::from_bound(p, &prefix), x, cfg.heads, &mut maps);
        let r = g.add(x, attn);
        x = g.layer_norm(r, p.get(&format!("{prefix}.ln1.g")), p.get(&format!("{prefix}.ln1.b")), LN_EPS);
        let h = g.linear(x, p.get(&format!("{prefix}.ff1.w")), p.get(&format!("{prefix}.ff1.b")));
        let h = g.relu(h);
        let h = g.linear(h, p.get(&format!("{prefix}.ff2.w")), p.get(&format!("{prefix}.ff2.b")));
        let r = g.add(x, h);
        x = g.layer_norm(r, p.get(&format!("{prefix}.ln2.g")), p.get(&format!("{prefix}.ln2.b")), LN_EPS);
    }
    let cls = g.select_row(x, 0);
    let logits = g.linear(cls, p.get("head.w"), p.get("head.b"));
    let mut data = Vec::with_capacity(maps.len() * s * s);
    for m in maps {
        data.extend_from_slice(g.data(m));
    }
    let trace = AttentionTrace::new(cfg.layers, cfg.heads, s, data)?;
    Ok((logits, trace))
}

/// Inference-only convenience wrapper around [`encoder_forward`].
pub fn encoder_logits(params: &ParamStore, cfg: &EncoderConfig, tokens: &[u32]) -> Result<(Vec<f64>, AttentionTrace)> {
    let mut g = Graph::new();
    let p = g.bind(params, false);
    let (logits, trace) = encoder_forward(&mut g, &p, cfg, tokens)?;
    Ok((g.data(logits).to_vec(), trace))
}
