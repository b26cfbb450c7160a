//! Residual-norm importance sampling of training samples, the reweighted
//! square loss, and the variance diagnostics behind the optimal distribution.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Matrix;
use crate::error::{CoreError, Result};
use crate::risk::BoostingWeights;
use crate::subgrid::keep_count;

/// Sampling probabilities proportional to residual norms.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleDistribution {
    probs: Vec<f64>,
    norms: Vec<f64>,
}

impl SampleDistribution {
    /// `p_i = n_i / sum_j n_j`.
    pub fn from_norms(norms: Vec<f64>) -> Result<Self> {
        if norms.is_empty() || norms.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(CoreError::InvalidArgument("norms must be finite and nonnegative".into()));
        }
        let total: f64 = norms.iter().sum();
        if total == 0.0 {
            return Err(CoreError::ConvergedResiduals);
        }
        let probs = norms.iter().map(|v| v / total).collect();
        Ok(Self { probs, norms })
    }

    /// Uniform over `n` samples.
    pub fn uniform(n: usize) -> Result<Self> {
        Self::from_norms(vec![1.0; n])
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn norms(&self) -> &[f64] {
        &self.norms
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

pub fn residual_distribution(weights: &BoostingWeights) -> Result<SampleDistribution> {
    SampleDistribution::from_norms(weights.norms())
}

/// A multiset of sample indices in draw order.
///
/// A draw with `sigma = 1` is exhaustive: every index exactly once, in order,
/// with unit loss weights. The estimate is then exact, and importance-sampled
/// boosting reduces to plain boosting.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DrawnSubset {
    indices: Vec<usize>,
    seed: u64,
    exhaustive: bool,
}

impl DrawnSubset {
    pub fn exhaustive(n: usize) -> Self {
        Self { indices: (0..n).collect(), seed: 0, exhaustive: true }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn is_exhaustive(&self) -> bool {
        self.exhaustive
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn multiplicities(&self) -> BTreeMap<usize, usize> {
        let mut m = BTreeMap::new();
        for &i in &self.indices {
            *m.entry(i).or_insert(0) += 1;
        }
        m
    }

    /// Loss weight `1/(n p_i)` of every drawn element, or 1 for an exhaustive
    /// draw.
    pub fn loss_weights(&self, dist: &SampleDistribution) -> Vec<f64> {
        if self.exhaustive {
            return vec![1.0; self.indices.len()];
        }
        let n = dist.len() as f64;
        self.indices
            .iter()
            .map(|&i| {
                let p = dist.probs[i];
                assert!(p > 0.0, "contract violation: drew sample {i} with zero probability");
                1.0 / (n * p)
            })
            .collect()
    }
}

/// `ceil(sigma n)` independent draws with replacement from `dist`.
pub fn draw_subset(dist: &SampleDistribution, sigma: f64, seed: u64) -> Result<DrawnSubset> {
    if !(sigma > 0.0 && sigma <= 1.0) {
        return Err(CoreError::InvalidArgument(format!("sample fraction must lie in (0, 1], got {sigma}")));
    }
    let n = dist.len();
    if sigma == 1.0 {
        return Ok(DrawnSubset { seed, ..DrawnSubset::exhaustive(n) });
    }
    let count = keep_count(sigma, n);
    let index = WeightedIndex::new(&dist.probs).map_err(|e| CoreError::InvalidArgument(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let indices = (0..count).map(|_| index.sample(&mut rng)).collect();
    Ok(DrawnSubset { indices, seed, exhaustive: false })
}

/// `sum_{k} c_k ||g(x_{i_k}) - w_{i_k}||^2` over the drawn multiset, with
/// `c_k = 1/(n p_{i_k})`. `outputs` and `targets` hold one row per sample of
/// the full dataset.
pub fn unbiased_square_loss(subset: &DrawnSubset, dist: &SampleDistribution, outputs: &Matrix, targets: &Matrix) -> Result<f64> {
    if outputs.rows() != dist.len() || (outputs.rows(), outputs.cols()) != (targets.rows(), targets.cols()) {
        return Err(CoreError::ExtentMismatch("outputs, targets and distribution must cover the same samples".into()));
    }
    let c = subset.loss_weights(dist);
    Ok(subset
        .indices
        .iter()
        .zip(c)
        .map(|(&i, c)| c * outputs.row(i).iter().zip(targets.row(i)).map(|(g, w)| (g - w) * (g - w)).sum::<f64>())
        .sum())
}

/// `sum_i n_i^2 / q_i - (sum_i n_i)^2`, nonnegative and zero exactly when `q`
/// is proportional to `norms`.
pub fn jensen_gap(norms: &[f64], q: &[f64]) -> Result<f64> {
    if norms.len() != q.len() {
        return Err(CoreError::ExtentMismatch(format!("{} norms against {} probabilities", norms.len(), q.len())));
    }
    let mut weighted = 0.0;
    for (i, (&n, &p)) in norms.iter().zip(q).enumerate() {
        if n > 0.0 {
            if p <= 0.0 {
                return Err(CoreError::InfiniteVariance { sample: i });
            }
            weighted += n * n / p;
        }
    }
    let total: f64 = norms.iter().sum();
    Ok(weighted - total * total)
}

/// Monte-Carlo estimate of `E ||g_bar - g||^2`, the excess second moment of
/// the subsampled functional gradient.
///
/// `grads` holds the per-sample gradient rows `g^i`. The full gradient has
/// row `i` equal to `g^i / n`; a draw of `|I|` samples contributes
/// `c_i g^i / |I|` per occurrence of `i`, with `c_i` the loss weight of
/// [`DrawnSubset::loss_weights`].
pub fn estimator_variance(dist: &SampleDistribution, sigma: f64, resamples: usize, seed: u64, grads: &Matrix) -> Result<f64> {
    if grads.rows() != dist.len() {
        return Err(CoreError::ExtentMismatch(format!("{} gradient rows for {} samples", grads.rows(), dist.len())));
    }
    if resamples == 0 {
        return Err(CoreError::InvalidArgument("need at least one resample".into()));
    }
    let n = dist.len();
    let sq: Vec<f64> = grads.iter_rows().map(|r| r.iter().map(|v| v * v).sum()).collect();
    let inv_n = 1.0 / n as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![0usize; n];
    let mut total = 0.0;
    for _ in 0..resamples {
        let draw = draw_subset(dist, sigma, rand::Rng::random(&mut rng))?;
        counts.iter_mut().for_each(|c| *c = 0);
        for &i in draw.indices() {
            counts[i] += 1;
        }
        let c = draw.loss_weights(dist);
        // Every occurrence of i carries the same weight, so look one up.
        let mut weight_of = vec![0.0; n];
        for (&i, &ci) in draw.indices().iter().zip(&c) {
            weight_of[i] = ci;
        }
        let size = draw.len() as f64;
        let mut err = 0.0;
        for i in 0..n {
            let coef = counts[i] as f64 * weight_of[i] / size - inv_n;
            err += coef * coef * sq[i];
        }
        total += err;
    }
    Ok(total / resamples as f64)
}

/// Closed form of [`estimator_variance`] for independent draws:
/// `(1/|I|) (sum_i ||g^i||^2 / (n^2 p_i) - ||g||^2)`.
pub fn estimator_variance_exact(dist: &SampleDistribution, draws: usize, grads: &Matrix) -> f64 {
    let n = dist.len() as f64;
    let mut second = 0.0;
    let mut full = 0.0;
    for (i, r) in grads.iter_rows().enumerate() {
        let s: f64 = r.iter().map(|v| v * v).sum();
        if s > 0.0 {
            second += s / (n * n * dist.probs[i]);
        }
        full += s / (n * n);
    }
    (second - full) / draws as f64
}
