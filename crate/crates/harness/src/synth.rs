//! Synthetic datasets with a known planted signal.
//!
//! Images carry class-specific Gaussian blobs on a few rows and pure noise
//! elsewhere. Sequences carry class-indicative tokens among uniform
//! distractors. The planted rows or tokens are reported in [`Metadata`].

use boostkit_core::seed::{rng_for, Stream};
use boostkit_core::{LabeledDataset, Modality, Sample};
use boostkit_nn::Tensor;
use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::CLS_TOKEN;
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyntheticKind {
    ImagePlantedRows,
    SequencePlantedTokens,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageSynthParams {
    pub n_train: usize,
    pub n_test: usize,
    pub classes: usize,
    pub height: usize,
    pub width: usize,
    pub planted_rows: usize,
    /// Peak of the class blob relative to unit noise.
    pub amplitude: f64,
    pub blob_width: f64,
}

impl Default for ImageSynthParams {
    fn default() -> Self {
        Self { n_train: 600, n_test: 300, classes: 3, height: 8, width: 8, planted_rows: 3, amplitude: 1.0, blob_width: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceSynthParams {
    pub n_train: usize,
    pub n_test: usize,
    pub classes: usize,
    /// Content tokens are `1..=vocab`.
    pub vocab: u32,
    pub planted_per_class: usize,
    /// Lengths include the classification token.
    pub min_len: usize,
    pub max_len: usize,
    /// Chance that a position holds a planted token.
    pub plant_rate: f64,
    /// Chance that a planted token comes from another class's set.
    pub cross_rate: f64,
}

impl Default for SequenceSynthParams {
    fn default() -> Self {
        Self {
            n_train: 600,
            n_test: 300,
            classes: 2,
            vocab: 200,
            planted_per_class: 5,
            min_len: 16,
            max_len: 32,
            plant_rate: 0.1,
            cross_rate: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SynthParams {
    Image(ImageSynthParams),
    Sequence(SequenceSynthParams),
}

impl SynthParams {
    pub fn defaults(kind: SyntheticKind) -> Self {
        match kind {
            SyntheticKind::ImagePlantedRows => SynthParams::Image(ImageSynthParams::default()),
            SyntheticKind::SequencePlantedTokens => SynthParams::Sequence(SequenceSynthParams::default()),
        }
    }

    pub fn modality(&self) -> Modality {
        match self {
            SynthParams::Image(_) => Modality::Image,
            SynthParams::Sequence(_) => Modality::Sequence,
        }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        match self {
            SynthParams::Image(p) => {
                if p.n_train == 0 || p.n_test == 0 || p.classes < 2 || p.height == 0 || p.width == 0 {
                    return Err("image generator needs samples, two classes and nonzero extents".into());
                }
                if p.planted_rows == 0 || p.planted_rows > p.height {
                    return Err(format!("cannot plant {} of {} rows", p.planted_rows, p.height));
                }
                if !(p.amplitude >= 0.0 && p.amplitude.is_finite() && p.blob_width > 0.0) {
                    return Err("amplitude must be nonnegative and blob width positive".into());
                }
            }
            SynthParams::Sequence(p) => {
                if p.n_train == 0 || p.n_test == 0 || p.classes < 2 {
                    return Err("sequence generator needs samples and two classes".into());
                }
                if p.planted_per_class * p.classes >= p.vocab as usize {
                    return Err("planted tokens must leave distractors".into());
                }
                if p.min_len < 1 || p.min_len > p.max_len {
                    return Err(format!("bad length range {}..={}", p.min_len, p.max_len));
                }
                if !(0.0..=1.0).contains(&p.plant_rate) || !(0.0..=1.0).contains(&p.cross_rate) {
                    return Err("plant and cross rates must lie in [0, 1]".into());
                }
            }
        }
        Ok(())
    }
}

/// What was planted, written next to generated files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Metadata {
    ImagePlantedRows {
        seed: u64,
        params: ImageSynthParams,
        /// Sorted row indices carrying signal.
        planted_rows: Vec<usize>,
        /// Blob center column per class and planted row.
        centers: Vec<Vec<f64>>,
    },
    SequencePlantedTokens {
        seed: u64,
        params: SequenceSynthParams,
        /// Indicative tokens of each class, sorted.
        planted_tokens: Vec<Vec<u32>>,
    },
}

impl Metadata {
    pub fn planted_rows(&self) -> Option<&[usize]> {
        match self {
            Metadata::ImagePlantedRows { planted_rows, .. } => Some(planted_rows),
            _ => None,
        }
    }

    /// All planted tokens, sorted.
    pub fn planted_tokens(&self) -> Option<Vec<u32>> {
        match self {
            Metadata::SequencePlantedTokens { planted_tokens, .. } => {
                let mut all: Vec<u32> = planted_tokens.iter().flatten().copied().collect();
                all.sort_unstable();
                Some(all)
            }
            _ => None,
        }
    }
}

pub struct SyntheticData {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub metadata: Metadata,
}

pub fn generate_synthetic(params: &SynthParams, seed: u64) -> Result<SyntheticData> {
    if let Err(e) = params.validate() {
        return Err(crate::error::HarnessError::Config(e));
    }
    let mut rng = rng_for(seed, Stream::Data, 0);
    match params {
        SynthParams::Image(p) => generate_images(p, seed, &mut rng),
        SynthParams::Sequence(p) => generate_sequences(p, seed, &mut rng),
    }
}

fn cyclic_distance(a: f64, b: f64, period: f64) -> f64 {
    let d = (a - b).rem_euclid(period);
    d.min(period - d)
}

fn generate_images(p: &ImageSynthParams, seed: u64, rng: &mut ChaCha8Rng) -> Result<SyntheticData> {
    let (h, w, m) = (p.height, p.width, p.classes);
    let mut rows = sample_indices(rng, h, p.planted_rows).into_vec();
    rows.sort_unstable();
    let shifts: Vec<f64> = rows.iter().map(|_| rng.random_range(0.0..w as f64)).collect();
    let centers: Vec<Vec<f64>> = (0..m)
        .map(|k| shifts.iter().map(|s| ((k as f64 + 0.5) * w as f64 / m as f64 + s).rem_euclid(w as f64)).collect())
        .collect();
    let mut templates = vec![vec![0.0; h * w]; m];
    for (k, t) in templates.iter_mut().enumerate() {
        for (r, &j) in rows.iter().enumerate() {
            for col in 0..w {
                let d = cyclic_distance(col as f64, centers[k][r], w as f64);
                t[j * w + col] = p.amplitude * (-d * d / (2.0 * p.blob_width * p.blob_width)).exp();
            }
        }
    }
    let mut make = |n: usize| -> Result<LabeledDataset> {
        let mut samples = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let z = rng.random_range(0..m);
            let data = templates[z]
                .iter()
                .map(|&t| {
                    let noise: f64 = StandardNormal.sample(&mut *rng);
                    // Stored values are exactly representable in the f32 file format.
                    (t + noise) as f32 as f64
                })
                .collect();
            samples.push(Sample::Image(Tensor::new(vec![1, h, w], data).map_err(boostkit_core::CoreError::from)?));
            labels.push(z);
        }
        Ok(LabeledDataset::new(samples, labels, m)?)
    };
    let train = make(p.n_train)?;
    let test = make(p.n_test)?;
    Ok(SyntheticData { train, test, metadata: Metadata::ImagePlantedRows { seed, params: p.clone(), planted_rows: rows, centers } })
}

fn generate_sequences(p: &SequenceSynthParams, seed: u64, rng: &mut ChaCha8Rng) -> Result<SyntheticData> {
    let m = p.classes;
    let total = p.planted_per_class * m;
    let picked: Vec<u32> = sample_indices(rng, p.vocab as usize, total).into_iter().map(|i| i as u32 + 1).collect();
    let planted: Vec<Vec<u32>> = picked
        .chunks(p.planted_per_class)
        .map(|c| {
            let mut v = c.to_vec();
            v.sort_unstable();
            v
        })
        .collect();
    let distractors: Vec<u32> = (1..=p.vocab).filter(|t| !picked.contains(t)).collect();
    let mut make = |n: usize| -> Result<LabeledDataset> {
        let mut samples = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let z = rng.random_range(0..m);
            let len = rng.random_range(p.min_len..=p.max_len);
            let mut seq = Vec::with_capacity(len);
            seq.push(CLS_TOKEN);
            for _ in 1..len {
                let tok = if rng.random_bool(p.plant_rate) {
                    let class = if rng.random_bool(p.cross_rate) {
                        (z + rng.random_range(1..m)) % m
                    } else {
                        z
                    };
                    planted[class][rng.random_range(0..p.planted_per_class)]
                } else {
                    distractors[rng.random_range(0..distractors.len())]
                };
                seq.push(tok);
            }
            samples.push(Sample::Sequence(seq));
            labels.push(z);
        }
        Ok(LabeledDataset::new(samples, labels, m)?)
    };
    let train = make(p.n_train)?;
    let test = make(p.n_test)?;
    Ok(SyntheticData {
        train,
        test,
        metadata: Metadata::SequencePlantedTokens { seed, params: p.clone(), planted_tokens: planted },
    })
}
