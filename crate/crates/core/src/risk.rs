//! Classification risk and the boosting weights derived from it.

use serde::{Deserialize, Serialize};

use crate::data::Matrix;
use crate::error::{CoreError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskKind {
    /// `L(z,f) = sum_{j != z} exp(-(f_z - f_j)/2)`
    Exponential,
    /// Negative log-softmax likelihood of the label.
    CrossEntropy,
}

fn check(f: &Matrix, labels: &[usize]) -> Result<()> {
    if f.rows() != labels.len() {
        return Err(CoreError::ExtentMismatch(format!("{} score rows for {} labels", f.rows(), labels.len())));
    }
    if let Some((sample, &label)) = labels.iter().enumerate().find(|(_, &z)| z >= f.cols()) {
        return Err(CoreError::LabelOutOfRange { sample, label, classes: f.cols() });
    }
    if let Some(sample) = (0..f.rows()).find(|&i| f.row(i).iter().any(|v| !v.is_finite())) {
        return Err(CoreError::NonFiniteScore { sample });
    }
    Ok(())
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Loss of one sample with label `z`.
pub fn sample_loss(row: &[f64], z: usize, kind: RiskKind) -> f64 {
    match kind {
        RiskKind::Exponential => {
            let fz = row[z];
            row.iter().enumerate().filter(|&(j, _)| j != z).map(|(_, fj)| (-0.5 * (fz - fj)).exp()).sum()
        }
        RiskKind::CrossEntropy => log_sum_exp(row) - row[z],
    }
}

/// Mean loss over the rows of `f`.
pub fn compute_risk(f: &Matrix, labels: &[usize], kind: RiskKind) -> Result<f64> {
    weighted_risk(f, labels, kind, None)
}

/// `(1/n) sum_i c_i L(z_i, f_i)`; with `c = None` every `c_i` is 1.
///
/// Importance-sampled rounds evaluate the line-search objective on the drawn
/// multiset with `c_i = 1/(n p_i)`, which keeps the estimate unbiased.
pub fn weighted_risk(f: &Matrix, labels: &[usize], kind: RiskKind, c: Option<&[f64]>) -> Result<f64> {
    check(f, labels)?;
    if let Some(c) = c {
        if c.len() != labels.len() {
            return Err(CoreError::ExtentMismatch(format!("{} risk weights for {} samples", c.len(), labels.len())));
        }
    }
    let mut total = 0.0;
    for (i, &z) in labels.iter().enumerate() {
        let l = sample_loss(f.row(i), z, kind);
        total += c.map_or(1.0, |c| c[i]) * l;
    }
    Ok(total / labels.len() as f64)
}

/// Per-sample regression targets `w(x_i, z_i)`, one row per sample.
///
/// Every row sums to zero, its label entry is positive and all other entries
/// are nonpositive.
#[derive(Clone, Debug, PartialEq)]
pub struct BoostingWeights(Matrix);

impl BoostingWeights {
    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.0.row(i)
    }

    pub fn len(&self) -> usize {
        self.0.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.rows() == 0
    }

    /// Euclidean norm of every row.
    pub fn norms(&self) -> Vec<f64> {
        self.0.iter_rows().map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt()).collect()
    }
}

/// `w = -2 dL/df` per sample.
///
/// The exponential risk uses its closed form, the cross-entropy risk the
/// softmax derivative `2 (onehot - softmax)`.
pub fn compute_weights(f: &Matrix, labels: &[usize], kind: RiskKind) -> Result<BoostingWeights> {
    check(f, labels)?;
    let m = f.cols();
    let mut w = Matrix::zeros(f.rows(), m);
    for (i, &z) in labels.iter().enumerate() {
        let row = f.row(i);
        let out = w.row_mut(i);
        match kind {
            RiskKind::Exponential => {
                let fz = row[z];
                let mut pos = 0.0;
                for k in (0..m).filter(|&k| k != z) {
                    let e = (-0.5 * (fz - row[k])).exp();
                    out[k] = -e;
                    pos += e;
                }
                out[z] = pos;
            }
            RiskKind::CrossEntropy => {
                let lse = log_sum_exp(row);
                let mut neg = 0.0;
                for k in (0..m).filter(|&k| k != z) {
                    let p = 2.0 * (row[k] - lse).exp();
                    out[k] = -p;
                    neg += p;
                }
                // Summing the off-label mass keeps the row sum at zero to rounding.
                out[z] = neg;
            }
        }
    }
    Ok(BoostingWeights(w))
}

/// Weak-learner regression targets. With the proportionality constant fixed
/// to 1 the target of sample `i` is row `i` of `W`.
pub fn build_regression_target(weights: &BoostingWeights) -> Matrix {
    weights.0.clone()
}
