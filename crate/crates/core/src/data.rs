//! Dense score matrices and labeled datasets.

use std::collections::BTreeSet;

use boostkit_nn::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Row-major `rows x cols` matrix of f64. Rows are samples, columns classes.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(CoreError::ExtentMismatch(format!("{rows}x{cols} matrix from {} values", data.len())));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(CoreError::ExtentMismatch("ragged rows".into()));
        }
        Ok(Self { rows: rows.len(), cols, data: rows.concat() })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.cols.max(1)).take(self.rows)
    }

    /// Rows gathered by index, duplicates allowed.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix { rows: idx.len(), cols: self.cols, data }
    }

    /// `self += a * other`
    pub fn axpy(&mut self, a: f64, other: &Matrix) -> Result<()> {
        if (self.rows, self.cols) != (other.rows, other.cols) {
            return Err(CoreError::ExtentMismatch(format!(
                "{}x{} += {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        for (s, o) in self.data.iter_mut().zip(&other.data) {
            *s += a * o;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Image,
    Sequence,
}

/// One input: an image `[C,H,W]` or a token sequence that starts with the
/// classification token.
#[derive(Clone, Debug, PartialEq)]
pub enum Sample {
    Image(Tensor),
    Sequence(Vec<u32>),
}

impl Sample {
    pub fn modality(&self) -> Modality {
        match self {
            Sample::Image(_) => Modality::Image,
            Sample::Sequence(_) => Modality::Sequence,
        }
    }

    pub fn as_image(&self) -> Option<&Tensor> {
        match self {
            Sample::Image(t) => Some(t),
            Sample::Sequence(_) => None,
        }
    }

    pub fn as_tokens(&self) -> Option<&[u32]> {
        match self {
            Sample::Sequence(s) => Some(s),
            Sample::Image(_) => None,
        }
    }
}

/// Samples with 0-based labels in `0..classes`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    samples: Vec<Sample>,
    labels: Vec<usize>,
    classes: usize,
    modality: Modality,
}

impl LabeledDataset {
    pub fn new(samples: Vec<Sample>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        let first = samples.first().ok_or_else(|| CoreError::Dataset("dataset has no samples".into()))?;
        if samples.len() != labels.len() {
            return Err(CoreError::Dataset(format!("{} samples but {} labels", samples.len(), labels.len())));
        }
        if classes < 2 {
            return Err(CoreError::Dataset(format!("need at least two classes, got {classes}")));
        }
        if let Some((sample, &label)) = labels.iter().enumerate().find(|(_, &z)| z >= classes) {
            return Err(CoreError::LabelOutOfRange { sample, label, classes });
        }
        let modality = first.modality();
        for (i, s) in samples.iter().enumerate() {
            if s.modality() != modality {
                return Err(CoreError::Dataset(format!("sample {i} breaks modality homogeneity")));
            }
        }
        if let Sample::Image(t0) = first {
            if t0.rank() != 3 {
                return Err(CoreError::Dataset(format!("images must be [C,H,W], got {:?}", t0.shape())));
            }
            for (i, s) in samples.iter().enumerate() {
                if s.as_image().map(Tensor::shape) != Some(t0.shape()) {
                    return Err(CoreError::Dataset(format!("sample {i} has different image extents")));
                }
            }
        }
        Ok(Self { samples, labels, classes, modality })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    /// `[C,H,W]` of the images, `None` for sequences.
    pub fn image_extents(&self) -> Option<[usize; 3]> {
        self.samples[0].as_image().map(|t| {
            let s = t.shape();
            [s[0], s[1], s[2]]
        })
    }

    /// Every token id that occurs in some sequence.
    pub fn vocabulary(&self) -> BTreeSet<u32> {
        self.samples.iter().filter_map(Sample::as_tokens).flat_map(|s| s.iter().copied()).collect()
    }

    pub fn subset(&self, idx: &[usize]) -> LabeledDataset {
        LabeledDataset {
            samples: idx.iter().map(|&i| self.samples[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
            modality: self.modality,
        }
    }

    /// The same labels over transformed samples.
    pub fn map_samples(&self, f: impl Fn(&Sample) -> Result<Sample>) -> Result<LabeledDataset> {
        let samples = self.samples.iter().map(f).collect::<Result<Vec<_>>>()?;
        LabeledDataset::new(samples, self.labels.clone(), self.classes)
    }
}
