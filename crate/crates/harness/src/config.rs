//! Experiment configuration: a flat TOML file whose keys are the field names
//! of [`ExperimentConfig`]. Unset keys take their value from the profile.

use std::fs;
use std::path::{Path, PathBuf};

use boostkit_core::{Modality, RiskKind};
use boostkit_nn::AdamConfig;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::synth::{ImageSynthParams, SequenceSynthParams, SynthParams, SyntheticKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    SingleModel,
    EEnsemble,
    SubgridEEnsemble,
    Boost,
    SubgridBoost,
    SubsequenceBoost,
    ImportanceSamplingBoost,
    SubsequenceImportanceSamplingBoost,
    SubsequenceBaseline,
}

impl Variant {
    /// The modality the variant is restricted to, if any.
    pub fn required_modality(self) -> Option<Modality> {
        match self {
            Variant::SubgridEEnsemble | Variant::SubgridBoost => Some(Modality::Image),
            Variant::SubsequenceBoost | Variant::SubsequenceImportanceSamplingBoost | Variant::SubsequenceBaseline => {
                Some(Modality::Sequence)
            }
            _ => None,
        }
    }

    pub fn is_boosted(self) -> bool {
        matches!(
            self,
            Variant::Boost
                | Variant::SubgridBoost
                | Variant::SubsequenceBoost
                | Variant::ImportanceSamplingBoost
                | Variant::SubsequenceImportanceSamplingBoost
        )
    }

    pub fn samples_residuals(self) -> bool {
        matches!(self, Variant::ImportanceSamplingBoost | Variant::SubsequenceImportanceSamplingBoost)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::SingleModel => "single-model",
            Variant::EEnsemble => "e-ensemble",
            Variant::SubgridEEnsemble => "subgrid-e-ensemble",
            Variant::Boost => "boost",
            Variant::SubgridBoost => "subgrid-boost",
            Variant::SubsequenceBoost => "subsequence-boost",
            Variant::ImportanceSamplingBoost => "importance-sampling-boost",
            Variant::SubsequenceImportanceSamplingBoost => "subsequence-importance-sampling-boost",
            Variant::SubsequenceBaseline => "subsequence-baseline",
        }
    }
}

/// Named default sets. `desk` is sized for CPU minutes; `paper` is the
/// full-scale setting with smaller shrinkage and learning rates and more rounds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    #[default]
    Desk,
    Paper,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Adam,
    Adamw,
}

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Files { train: PathBuf, test: PathBuf },
    Synthetic(SynthParams),
}

impl DataSource {
    pub fn modality(&self) -> Modality {
        match self {
            DataSource::Files { train, .. } => modality_of_path(train).unwrap_or(Modality::Image),
            DataSource::Synthetic(p) => p.modality(),
        }
    }
}

/// Transformer shape for sequence runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncoderShape {
    pub width: usize,
    pub heads: usize,
    pub layers: usize,
    pub ffn_width: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub variant: Variant,
    pub profile: Profile,
    pub n_b: usize,
    pub nu: f64,
    pub sigma: f64,
    pub rho: f64,
    pub epochs: usize,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub warmup_ratio: f64,
    pub risk: RiskKind,
    pub seed: u64,
    pub data: DataSource,
    pub encoder: EncoderShape,
    pub out_dir: Option<PathBuf>,
    /// When off, the wall-time column is left empty so that repeated runs
    /// write identical files.
    pub record_wall_time: bool,
    pub sampling_diagnostics: bool,
    pub diagnostic_resamples: usize,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    variant: Option<Variant>,
    profile: Option<Profile>,
    n_b: Option<usize>,
    nu: Option<f64>,
    sigma: Option<f64>,
    rho: Option<f64>,
    epochs: Option<usize>,
    optimizer: Option<OptimizerKind>,
    lr: Option<f64>,
    weight_decay: Option<f64>,
    batch_size: Option<usize>,
    warmup_ratio: Option<f64>,
    risk: Option<RiskKind>,
    seed: Option<u64>,
    train_path: Option<PathBuf>,
    test_path: Option<PathBuf>,
    synthetic: Option<SyntheticKind>,
    synthetic_train: Option<usize>,
    synthetic_test: Option<usize>,
    signal_amplitude: Option<f64>,
    encoder_width: Option<usize>,
    encoder_heads: Option<usize>,
    encoder_layers: Option<usize>,
    encoder_ffn_width: Option<usize>,
    out_dir: Option<PathBuf>,
    record_wall_time: Option<bool>,
    sampling_diagnostics: Option<bool>,
    diagnostic_resamples: Option<usize>,
}

struct Defaults {
    n_b: usize,
    nu: f64,
    sigma: f64,
    rho: f64,
    epochs: usize,
    optimizer: OptimizerKind,
    lr: f64,
    weight_decay: f64,
    batch_size: usize,
    warmup_ratio: f64,
    risk: RiskKind,
}

fn defaults(profile: Profile, modality: Modality) -> Defaults {
    match (profile, modality) {
        (Profile::Desk, Modality::Image) => Defaults {
            n_b: 5,
            nu: 0.1,
            sigma: 0.8,
            // 7 of 8 rows and columns: the 8x8 analogue of keeping 90%.
            rho: 0.875,
            // Short, slow training keeps each round's learner weak.
            epochs: 8,
            optimizer: OptimizerKind::Adam,
            lr: 1e-3,
            weight_decay: 0.0,
            batch_size: 32,
            warmup_ratio: 0.0,
            risk: RiskKind::CrossEntropy,
        },
        (Profile::Desk, Modality::Sequence) => Defaults {
            n_b: 4,
            nu: 0.1,
            sigma: 0.8,
            rho: 1.0,
            epochs: 5,
            optimizer: OptimizerKind::Adamw,
            lr: 1e-3,
            weight_decay: 0.01,
            batch_size: 16,
            warmup_ratio: 0.06,
            risk: RiskKind::Exponential,
        },
        (Profile::Paper, Modality::Image) => Defaults {
            n_b: 10,
            nu: 0.02,
            sigma: 0.8,
            rho: 0.9,
            epochs: 15,
            optimizer: OptimizerKind::Adam,
            lr: 1e-4,
            weight_decay: 0.0,
            batch_size: 32,
            warmup_ratio: 0.0,
            risk: RiskKind::CrossEntropy,
        },
        (Profile::Paper, Modality::Sequence) => Defaults {
            n_b: 6,
            nu: 0.02,
            sigma: 0.8,
            rho: 1.0,
            epochs: 5,
            optimizer: OptimizerKind::Adamw,
            lr: 1e-5,
            weight_decay: 0.01,
            batch_size: 16,
            warmup_ratio: 0.06,
            risk: RiskKind::Exponential,
        },
    }
}

fn config_err(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

/// Modality implied by a dataset file extension.
pub fn modality_of_path(path: &Path) -> Option<Modality> {
    match path.extension()?.to_str()? {
        "bkim" => Some(Modality::Image),
        "jsonl" => Some(Modality::Sequence),
        _ => None,
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        Self::resolve(raw, base_dir)
    }

    /// Reads a config file; relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// A synthetic-data config with profile defaults, for programmatic use.
    pub fn synthetic(variant: Variant, kind: SyntheticKind, seed: u64) -> Result<Self> {
        Self::resolve(RawConfig { variant: Some(variant), seed: Some(seed), synthetic: Some(kind), ..Default::default() }, Path::new("."))
    }

    fn resolve(raw: RawConfig, base_dir: &Path) -> Result<Self> {
        let variant = raw.variant.ok_or_else(|| config_err("missing key `variant`"))?;
        let seed = raw.seed.ok_or_else(|| config_err("missing key `seed`"))?;
        let profile = raw.profile.unwrap_or_default();
        let data = match (raw.synthetic, raw.train_path, raw.test_path) {
            (Some(kind), None, None) => {
                let params = match kind {
                    SyntheticKind::ImagePlantedRows => {
                        let mut p = ImageSynthParams::default();
                        p.n_train = raw.synthetic_train.unwrap_or(p.n_train);
                        p.n_test = raw.synthetic_test.unwrap_or(p.n_test);
                        p.amplitude = raw.signal_amplitude.unwrap_or(p.amplitude);
                        SynthParams::Image(p)
                    }
                    SyntheticKind::SequencePlantedTokens => {
                        let mut p = SequenceSynthParams::default();
                        p.n_train = raw.synthetic_train.unwrap_or(p.n_train);
                        p.n_test = raw.synthetic_test.unwrap_or(p.n_test);
                        p.plant_rate = raw.signal_amplitude.unwrap_or(p.plant_rate);
                        SynthParams::Sequence(p)
                    }
                };
                params.validate().map_err(config_err)?;
                DataSource::Synthetic(params)
            }
            (None, Some(train), Some(test)) => {
                if raw.synthetic_train.is_some() || raw.synthetic_test.is_some() || raw.signal_amplitude.is_some() {
                    return Err(config_err("synthetic_* and signal_amplitude only apply to synthetic data"));
                }
                let (train, test) = (base_dir.join(train), base_dir.join(test));
                let mt = modality_of_path(&train)
                    .ok_or_else(|| config_err(format!("{}: expected a .bkim or .jsonl file", train.display())))?;
                if modality_of_path(&test) != Some(mt) {
                    return Err(config_err("train_path and test_path must have the same format"));
                }
                DataSource::Files { train, test }
            }
            (Some(_), _, _) => return Err(config_err("set either `synthetic` or `train_path`/`test_path`, not both")),
            _ => return Err(config_err("need `synthetic` or both `train_path` and `test_path`")),
        };
        let modality = data.modality();
        if let Some(m) = variant.required_modality() {
            if m != modality {
                return Err(config_err(format!("variant {} needs {m:?} data", variant.name())));
            }
        }
        let d = defaults(profile, modality);
        let cfg = ExperimentConfig {
            variant,
            profile,
            n_b: raw.n_b.unwrap_or(d.n_b),
            nu: raw.nu.unwrap_or(d.nu),
            sigma: raw.sigma.unwrap_or(d.sigma),
            rho: raw.rho.unwrap_or(d.rho),
            epochs: raw.epochs.unwrap_or(d.epochs),
            optimizer: raw.optimizer.unwrap_or(d.optimizer),
            lr: raw.lr.unwrap_or(d.lr),
            weight_decay: raw.weight_decay.unwrap_or(d.weight_decay),
            batch_size: raw.batch_size.unwrap_or(d.batch_size),
            warmup_ratio: raw.warmup_ratio.unwrap_or(d.warmup_ratio),
            risk: raw.risk.unwrap_or(d.risk),
            seed,
            data,
            encoder: EncoderShape {
                width: raw.encoder_width.unwrap_or(32),
                heads: raw.encoder_heads.unwrap_or(2),
                layers: raw.encoder_layers.unwrap_or(2),
                ffn_width: raw.encoder_ffn_width.unwrap_or(64),
            },
            out_dir: raw.out_dir.map(|p| base_dir.join(p)),
            record_wall_time: raw.record_wall_time.unwrap_or(true),
            sampling_diagnostics: raw.sampling_diagnostics.unwrap_or(false),
            diagnostic_resamples: raw.diagnostic_resamples.unwrap_or(1000),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.nu) {
            return Err(config_err(format!("nu must lie in [0, 1], got {}", self.nu)));
        }
        if !(self.sigma > 0.0 && self.sigma <= 1.0) {
            return Err(config_err(format!("sigma must lie in (0, 1], got {}", self.sigma)));
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(config_err(format!("rho must lie in (0, 1], got {}", self.rho)));
        }
        if self.n_b == 0 {
            return Err(config_err("n_b must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(config_err("batch_size must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(config_err(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(config_err(format!("weight_decay must be nonnegative, got {}", self.weight_decay)));
        }
        if !(0.0..1.0).contains(&self.warmup_ratio) {
            return Err(config_err(format!("warmup_ratio must lie in [0, 1), got {}", self.warmup_ratio)));
        }
        let e = &self.encoder;
        if e.width == 0 || e.heads == 0 || e.layers == 0 || e.ffn_width == 0 || !e.width.is_multiple_of(e.heads) {
            return Err(config_err(format!("encoder width {} must be a positive multiple of heads {}", e.width, e.heads)));
        }
        if self.sampling_diagnostics && self.diagnostic_resamples == 0 {
            return Err(config_err("diagnostic_resamples must be positive"));
        }
        Ok(())
    }

    pub fn modality(&self) -> Modality {
        self.data.modality()
    }

    pub fn adam(&self) -> AdamConfig {
        match self.optimizer {
            OptimizerKind::Adam => AdamConfig::adam(self.lr, self.weight_decay),
            OptimizerKind::Adamw => AdamConfig::adamw(self.lr, self.weight_decay),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig> {
        ExperimentConfig::from_toml_str(text, Path::new("/data"))
    }

    #[test]
    fn profile_defaults_follow_modality() {
        let img = parse("variant = \"boost\"\nseed = 1\nsynthetic = \"image-planted-rows\"").unwrap();
        assert_eq!((img.n_b, img.nu, img.epochs, img.batch_size), (5, 0.1, 8, 32));
        let seq = parse("variant = \"boost\"\nseed = 1\nsynthetic = \"sequence-planted-tokens\"").unwrap();
        assert_eq!((seq.n_b, seq.epochs, seq.batch_size), (4, 5, 16));
        assert_eq!(seq.optimizer, OptimizerKind::Adamw);
        let paper = parse("variant = \"boost\"\nseed = 1\nprofile = \"paper\"\nsynthetic = \"image-planted-rows\"").unwrap();
        assert_eq!((paper.n_b, paper.nu, paper.rho, paper.sigma), (10, 0.02, 0.9, 0.8));
    }

    #[test]
    fn paths_resolve_against_the_config_directory() {
        let c = parse("variant = \"boost\"\nseed = 3\ntrain_path = \"a.jsonl\"\ntest_path = \"b.jsonl\"\nout_dir = \"out\"").unwrap();
        assert_eq!(c.data, DataSource::Files { train: "/data/a.jsonl".into(), test: "/data/b.jsonl".into() });
        assert_eq!(c.out_dir, Some(PathBuf::from("/data/out")));
        assert_eq!(c.modality(), Modality::Sequence);
    }

    #[test]
    fn rejects_bad_configs() {
        let base = "seed = 1\nsynthetic = \"image-planted-rows\"\n";
        for extra in [
            "variant = \"boost\"\nnu = 1.5",
            "variant = \"boost\"\nsigma = 0.0",
            "variant = \"boost\"\nn_b = 0",
            "variant = \"boost\"\nlearning_rate = 0.1",
            "variant = \"subsequence-boost\"",
            "variant = \"gradient-boost\"",
            "nu = 0.1",
        ] {
            let err = parse(&format!("{base}{extra}")).unwrap_err();
            assert!(matches!(err, HarnessError::Config(_)), "{extra}: {err}");
            assert_eq!(err.exit_code(), 2);
        }
        assert!(parse("variant = \"boost\"\nsynthetic = \"image-planted-rows\"").is_err());
        assert!(parse("variant = \"boost\"\nseed = 1\ntrain_path = \"a.bkim\"\ntest_path = \"b.jsonl\"").is_err());
        assert!(parse("variant = \"subgrid-boost\"\nseed = 1\ntrain_path = \"a.jsonl\"\ntest_path = \"b.jsonl\"").is_err());
    }
}
