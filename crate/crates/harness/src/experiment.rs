//! Runs one configured variant end to end.

use std::path::Path;
use std::time::{Duration, Instant};

use boostkit_core::attention::{aggregate_vocab, prune_vocab, HeadReduction, Vocabulary};
use boostkit_core::learners::{
    build_probe_model, fit_to_weights, train_classifier, transfer_transformer, CnnShape, CnnWeakLearner, Schedule,
    TrainConfig, TransformerWeakLearner,
};
use boostkit_core::sampling::{draw_subset, estimator_variance, jensen_gap, residual_distribution, SampleDistribution};
use boostkit_core::seed::{derive_seed, rng_for, Stream};
use boostkit_core::subgrid::{aggregate_rows_cols, keep_count, pixel_importance, select_subgrid, ImportanceGrid, SubgridMask};
use boostkit_core::{
    argmax, compute_risk, compute_weights, Booster, CoreError, Ensemble, FeatureView, LabeledDataset, Learner,
    LineSearch, Matrix, Modality, Round, RoundContext, RoundHooks, RoundKind, Sample, Subset, Trained,
};
use boostkit_nn::{AttentionTrace, EncoderConfig, Tensor};
use rand::seq::index::sample as sample_indices;

use crate::config::{DataSource, ExperimentConfig, Variant};
use crate::dataset::{load_image_dataset, read_sequence_records, CLS_TOKEN};
use crate::error::{HarnessError, Result};
use crate::metrics::{emit_metrics_csv, RoundMetrics};
use crate::synth::{generate_synthetic, Metadata};

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_DIR: &str = "checkpoint";

pub struct RunOutput {
    pub metrics: Vec<RoundMetrics>,
    pub ensemble: Ensemble,
}

/// Train and test sets of a config, with planted-signal metadata for
/// synthetic data.
pub fn load_data(cfg: &ExperimentConfig) -> Result<(LabeledDataset, LabeledDataset, Option<Metadata>)> {
    match &cfg.data {
        DataSource::Synthetic(p) => {
            let d = generate_synthetic(p, cfg.seed)?;
            Ok((d.train, d.test, Some(d.metadata)))
        }
        DataSource::Files { train, test } => match cfg.modality() {
            Modality::Image => {
                let (a, b) = (load_image_dataset(train)?, load_image_dataset(test)?);
                if a.image_extents() != b.image_extents() || a.classes() != b.classes() {
                    return Err(HarnessError::Invalid {
                        path: test.clone(),
                        reason: "test images differ from training images in extents or class count".into(),
                    });
                }
                Ok((a, b, None))
            }
            Modality::Sequence => {
                let (a, b) = (read_sequence_records(train)?, read_sequence_records(test)?);
                let m = a.max_label().max(b.max_label()).max(2);
                Ok((a.into_dataset(m)?, b.into_dataset(m)?, None))
            }
        },
    }
}

/// Loads the data, runs the variant and writes metrics and checkpoint into
/// `out_dir` when one is configured. Metrics of completed rounds are written
/// even when a later round fails.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let (train, test, _) = load_data(cfg)?;
    let result = run_on_data(cfg, &train, &test);
    if let Some(dir) = &cfg.out_dir {
        std::fs::create_dir_all(dir)?;
        match &result {
            Ok(out) => write_run(out, dir)?,
            Err(HarnessError::Aborted { partial, .. }) => emit_metrics_csv(partial, dir.join(METRICS_FILE))?,
            Err(_) => {}
        }
    }
    result
}

/// Runs the configured variant on already loaded data. Writes nothing.
pub fn run_on_data(cfg: &ExperimentConfig, train: &LabeledDataset, test: &LabeledDataset) -> Result<RunOutput> {
    cfg.validate()?;
    if train.modality() != test.modality() || train.classes() != test.classes() {
        return Err(HarnessError::Config("train and test sets disagree in modality or class count".into()));
    }
    if let Some(m) = cfg.variant.required_modality() {
        if m != train.modality() {
            return Err(HarnessError::Config(format!("variant {} needs {m:?} data", cfg.variant.name())));
        }
    }
    let family = Family::new(cfg, train, test)?;
    let mut run = Run { cfg, train, test, family, metrics: Vec::new() };
    let result = match cfg.variant {
        v if v.is_boosted() => run.boosted(),
        Variant::EEnsemble | Variant::SubgridEEnsemble => run.plain_ensemble(),
        _ => run.single_model(),
    };
    let metrics = std::mem::take(&mut run.metrics);
    match result {
        Ok(ensemble) => Ok(RunOutput { metrics, ensemble }),
        Err(source) => Err(HarnessError::Aborted { round: metrics.len(), source, partial: metrics }),
    }
}

/// Architecture of every learner in a run.
#[derive(Clone, Copy)]
enum Family {
    Cnn { shape: CnnShape, grid: (usize, usize) },
    Transformer(EncoderConfig),
}

impl Family {
    fn new(cfg: &ExperimentConfig, train: &LabeledDataset, test: &LabeledDataset) -> Result<Self> {
        let m = train.classes();
        Ok(match train.image_extents() {
            Some([c, h, w]) => Family::Cnn { shape: CnnShape::new(c, m), grid: (h, w) },
            None => {
                let seqs = || train.samples().iter().chain(test.samples()).filter_map(Sample::as_tokens);
                let max_token = seqs().flat_map(|s| s.iter().copied()).max().unwrap_or(CLS_TOKEN);
                let max_len = seqs().map(<[u32]>::len).max().unwrap_or(1);
                let e = cfg.encoder;
                Family::Transformer(EncoderConfig {
                    vocab_size: max_token as usize + 1,
                    max_len,
                    width: e.width,
                    heads: e.heads,
                    layers: e.layers,
                    ffn_width: e.ffn_width,
                    classes: m,
                    cls_token: CLS_TOKEN,
                })
            }
        })
    }

    /// A freshly initialized learner for inputs of extent `grid` (images).
    fn fresh(&self, grid: Option<(usize, usize)>, seed: u64) -> boostkit_core::Result<Learner> {
        Ok(match *self {
            Family::Cnn { shape, grid: full } => Learner::Cnn(CnnWeakLearner::new(shape, grid.unwrap_or(full), seed)?),
            Family::Transformer(cfg) => Learner::Transformer(TransformerWeakLearner::new(cfg, seed)?),
        })
    }
}

fn train_config(cfg: &ExperimentConfig, epochs: usize, round: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: cfg.batch_size,
        optim: cfg.adam(),
        schedule: if cfg.warmup_ratio > 0.0 { Schedule::WarmupLinear { ratio: cfg.warmup_ratio } } else { Schedule::Constant },
        seed: derive_seed(cfg.seed, Stream::Shuffle, round as u64),
    }
}

fn accuracy(f: &Matrix, labels: &[usize]) -> f64 {
    let hits = f.iter_rows().zip(labels).filter(|(row, &z)| argmax(row) == z).count();
    hits as f64 / labels.len() as f64
}

fn image_grid(inputs: &[Sample]) -> Option<(usize, usize)> {
    inputs.first()?.as_image().map(|t| (t.shape()[1], t.shape()[2]))
}

fn images_of(data: &LabeledDataset) -> Vec<Tensor> {
    data.samples().iter().filter_map(Sample::as_image).cloned().collect()
}

/// Outputs and attention traces of a transformer, one sequence at a time.
fn traced_outputs(learner: &TransformerWeakLearner, inputs: &[Sample]) -> boostkit_core::Result<(Matrix, Vec<AttentionTrace>)> {
    let m = learner.config().classes;
    let mut out = Vec::with_capacity(inputs.len() * m);
    let mut traces = Vec::with_capacity(inputs.len());
    for s in inputs {
        let tokens = s.as_tokens().ok_or_else(|| CoreError::InvalidArgument("transformer learner given an image".into()))?;
        let (logits, trace) = learner.trace(tokens)?;
        out.extend_from_slice(&logits);
        traces.push(trace);
    }
    Ok((Matrix::new(inputs.len(), m, out)?, traces))
}

fn cnn(learner: &Learner, round: usize) -> boostkit_core::Result<&CnnWeakLearner> {
    match learner {
        Learner::Cnn(l) => Ok(l),
        _ => Err(CoreError::InvalidArgument(format!("round {round}: subgrid selection needs CNN learners"))),
    }
}

/// Pixel importance of the probe model built from `incumbent` and `basic`,
/// refreshed on `mask`, followed by row/column selection.
fn select_next_subgrid(
    grid: &mut ImportanceGrid,
    images: &[Tensor],
    weights: &Matrix,
    mask: &SubgridMask,
    round: usize,
    rho: f64,
    incumbent: &CnnWeakLearner,
    basic: &CnnWeakLearner,
) -> boostkit_core::Result<SubgridMask> {
    let probe = build_probe_model(incumbent, basic)?;
    pixel_importance(grid, images, weights, mask, round, |g, x| probe.forward(g, x))?;
    let (rows, cols) = aggregate_rows_cols(grid);
    select_subgrid(&rows, &cols, rho)
}

enum Selection {
    None,
    Subgrid { rho: f64, grid: ImportanceGrid, mask: SubgridMask, images: Vec<Tensor> },
    Subsequence { sigma: f64, vocab: Vocabulary, full_len: usize, seqs: Vec<Vec<u32>>, traces: Vec<AttentionTrace> },
}

struct Diagnostics {
    jensen_gap_uniform: f64,
    variance_pstar: f64,
    variance_uniform: f64,
}

/// Round hooks shared by every boosted variant: the selection mechanism and
/// residual sampling are switched on per variant.
struct BoostHooks<'a> {
    cfg: &'a ExperimentConfig,
    family: Family,
    selection: Selection,
    sample_sigma: Option<f64>,
    view: FeatureView,
    subset: Option<Vec<usize>>,
    feature_fraction: f64,
    diagnostics: Option<Diagnostics>,
    /// Time spent on diagnostics this round, excluded from wall time.
    diagnostic_time: Duration,
}

impl BoostHooks<'_> {
    fn diagnose(&mut self, ctx: &RoundContext<'_>) -> boostkit_core::Result<()> {
        let start = Instant::now();
        let n = ctx.data.len();
        let sigma = self.sample_sigma.unwrap_or(self.cfg.sigma);
        let seed = derive_seed(self.cfg.seed, Stream::Sampling, (1 << 32) + ctx.round as u64);
        let pstar = residual_distribution(ctx.weights)?;
        let uniform = SampleDistribution::uniform(n)?;
        let grads = ctx.weights.matrix();
        let r = self.cfg.diagnostic_resamples;
        self.diagnostics = Some(Diagnostics {
            jensen_gap_uniform: jensen_gap(pstar.norms(), uniform.probs())?,
            variance_pstar: estimator_variance(&pstar, sigma, r, seed, grads)?,
            variance_uniform: estimator_variance(&uniform, sigma, r, seed, grads)?,
        });
        self.diagnostic_time += start.elapsed();
        Ok(())
    }
}

impl RoundHooks for BoostHooks<'_> {
    fn build_view(&mut self, ctx: &RoundContext<'_>) -> boostkit_core::Result<FeatureView> {
        let t = ctx.round;
        let view = match &mut self.selection {
            _ if t == 0 => FeatureView::Full,
            Selection::None => FeatureView::Full,
            Selection::Subgrid { rho, grid, mask, images } => {
                let rounds = ctx.ensemble.rounds();
                let basic = cnn(&rounds[0].learner, t)?;
                let incumbent = cnn(&rounds[t - 1].learner, t)?;
                let next = select_next_subgrid(grid, images, ctx.weights.matrix(), mask, t, *rho, incumbent, basic)?;
                self.feature_fraction = next.pixel_count() as f64 / (grid.height() * grid.width()) as f64;
                *mask = next.clone();
                FeatureView::Subgrid { mask: next }
            }
            Selection::Subsequence { sigma, vocab, full_len, seqs, traces } => {
                let scores = aggregate_vocab(seqs.iter().map(Vec::as_slice).zip(traces.iter()), CLS_TOKEN, HeadReduction::Mean)?;
                let next = prune_vocab(&scores, vocab, *sigma)?;
                self.feature_fraction = next.content_len() as f64 / *full_len as f64;
                *vocab = next.clone();
                FeatureView::Vocabulary { vocab: next }
            }
        };
        self.view = view.clone();
        Ok(view)
    }

    fn select_subset(&mut self, ctx: &RoundContext<'_>) -> boostkit_core::Result<Subset> {
        let t = ctx.round;
        self.diagnostics = None;
        if t > 0 && self.cfg.sampling_diagnostics {
            self.diagnose(ctx)?;
        }
        self.subset = None;
        match self.sample_sigma {
            Some(sigma) if t > 0 && sigma < 1.0 => {
                let dist = residual_distribution(ctx.weights)?;
                let draw = draw_subset(&dist, sigma, derive_seed(self.cfg.seed, Stream::Sampling, t as u64))?;
                let loss_weights = draw.loss_weights(&dist);
                let indices = draw.indices().to_vec();
                self.subset = Some(indices.clone());
                Ok(Subset { indices, loss_weights, exhaustive: false })
            }
            _ => Ok(Subset::all(ctx.data.len())),
        }
    }

    fn train(
        &mut self,
        ctx: &RoundContext<'_>,
        inputs: &[Sample],
        targets: &Matrix,
        loss_weights: &[f64],
    ) -> boostkit_core::Result<Trained> {
        let t = ctx.round;
        let cfg = self.cfg;
        let mut learner = match ctx.ensemble.last() {
            None => self.family.fresh(image_grid(inputs), derive_seed(cfg.seed, Stream::Init, 0))?,
            Some(prev) => match &prev.learner {
                Learner::Cnn(l) => {
                    let grid = image_grid(inputs).unwrap_or(l.grid());
                    Learner::Cnn(l.successor(grid, derive_seed(cfg.seed, Stream::Init, t as u64))?)
                }
                Learner::Transformer(l) => Learner::Transformer(transfer_transformer(l, l.config())?),
                other => other.clone(),
            },
        };
        fit_to_weights(&mut learner, inputs, targets, Some(loss_weights), &train_config(cfg, cfg.epochs, t))?;
        let full_inputs;
        let (eval_inputs, sampled) = match &self.subset {
            Some(idx) => {
                full_inputs = self.view.apply_all(ctx.data.samples(), t)?;
                (full_inputs.as_slice(), Some(idx))
            }
            None => (inputs, None),
        };
        let full = match &learner {
            Learner::Transformer(l) => {
                let (out, traces) = traced_outputs(l, eval_inputs)?;
                if let Selection::Subsequence { seqs, traces: cached, .. } = &mut self.selection {
                    *seqs = eval_inputs.iter().filter_map(Sample::as_tokens).map(<[u32]>::to_vec).collect();
                    *cached = traces;
                }
                out
            }
            l => l.predict(eval_inputs)?,
        };
        Ok(match sampled {
            Some(idx) => Trained { learner, outputs: full.select_rows(idx), full_outputs: Some(full) },
            None => Trained::new(learner, full),
        })
    }
}

struct Run<'a> {
    cfg: &'a ExperimentConfig,
    train: &'a LabeledDataset,
    test: &'a LabeledDataset,
    family: Family,
    metrics: Vec<RoundMetrics>,
}

impl Run<'_> {
    fn wall(&self, elapsed: Duration) -> Option<f64> {
        self.cfg.record_wall_time.then_some(elapsed.as_secs_f64())
    }

    fn boosted(&mut self) -> boostkit_core::Result<Ensemble> {
        let cfg = self.cfg;
        let (train, test) = (self.train, self.test);
        let selection = match cfg.variant {
            Variant::SubgridBoost => {
                let [_, h, w] = train.image_extents().expect("image data");
                Selection::Subgrid {
                    rho: cfg.rho,
                    grid: ImportanceGrid::new(h, w),
                    mask: SubgridMask::identity(h, w),
                    images: images_of(train),
                }
            }
            Variant::SubsequenceBoost | Variant::SubsequenceImportanceSamplingBoost => {
                let vocab = Vocabulary::new(train.vocabulary(), CLS_TOKEN, 0);
                Selection::Subsequence {
                    sigma: cfg.sigma,
                    full_len: vocab.content_len().max(1),
                    vocab,
                    seqs: Vec::new(),
                    traces: Vec::new(),
                }
            }
            _ => Selection::None,
        };
        let mut hooks = BoostHooks {
            cfg,
            family: self.family,
            selection,
            sample_sigma: cfg.variant.samples_residuals().then_some(cfg.sigma),
            view: FeatureView::Full,
            subset: None,
            feature_fraction: 1.0,
            diagnostics: None,
            diagnostic_time: Duration::ZERO,
        };
        let mut booster = Booster::new(train, cfg.nu, cfg.risk, LineSearch::default())?;
        let mut f_test = Matrix::zeros(test.len(), test.classes());
        let mut elapsed = Duration::ZERO;
        for t in 0..cfg.n_b {
            hooks.diagnostic_time = Duration::ZERO;
            let start = Instant::now();
            let report = if t == 0 { booster.basic_round(&mut hooks)? } else { booster.boost_round(&mut hooks)? };
            elapsed += start.elapsed().saturating_sub(hooks.diagnostic_time);
            let ensemble = booster.ensemble();
            f_test.axpy(ensemble.coefficient(t), &ensemble.round_outputs(t, test.samples())?)?;
            let d = hooks.diagnostics.take();
            self.metrics.push(RoundMetrics {
                round: t,
                alpha: report.alpha,
                train_risk: report.train_risk,
                test_accuracy: accuracy(&f_test, test.labels()),
                feature_fraction: hooks.feature_fraction,
                wall_time_s: self.wall(elapsed),
                jensen_gap_uniform: d.as_ref().map(|d| d.jensen_gap_uniform),
                variance_pstar: d.as_ref().map(|d| d.variance_pstar),
                variance_uniform: d.as_ref().map(|d| d.variance_uniform),
            });
        }
        Ok(booster.into_ensemble())
    }

    /// Members trained independently on true labels, averaged with equal
    /// weight. The subgrid flavour picks each member's subgrid from the
    /// previous member, probed against the weights of the zero model.
    fn plain_ensemble(&mut self) -> boostkit_core::Result<Ensemble> {
        let cfg = self.cfg;
        let (train, test) = (self.train, self.test);
        let subgrid = cfg.variant == Variant::SubgridEEnsemble;
        let zero_weights = compute_weights(&Matrix::zeros(train.len(), train.classes()), train.labels(), cfg.risk)?;
        let images = if subgrid { images_of(train) } else { Vec::new() };
        let mut grid = train.image_extents().map(|[_, h, w]| ImportanceGrid::new(h, w));
        let mut mask = train.image_extents().map(|[_, h, w]| SubgridMask::identity(h, w));
        let mut members: Vec<(FeatureView, Learner)> = Vec::with_capacity(cfg.n_b);
        let mut f_train = Matrix::zeros(train.len(), train.classes());
        let mut f_test = Matrix::zeros(test.len(), test.classes());
        let mut elapsed = Duration::ZERO;
        for t in 0..cfg.n_b {
            let start = Instant::now();
            let (view, fraction) = match (subgrid, &mut grid, &mut mask) {
                (true, Some(grid), Some(mask)) if t > 0 => {
                    let basic = cnn(&members[0].1, t)?;
                    let incumbent = cnn(&members[t - 1].1, t)?;
                    let next = select_next_subgrid(grid, &images, zero_weights.matrix(), mask, t, cfg.rho, incumbent, basic)?;
                    let fraction = next.pixel_count() as f64 / (grid.height() * grid.width()) as f64;
                    *mask = next.clone();
                    (FeatureView::Subgrid { mask: next }, fraction)
                }
                _ => (FeatureView::Full, 1.0),
            };
            let inputs = view.apply_all(train.samples(), t)?;
            let mut learner = self.family.fresh(image_grid(&inputs), derive_seed(cfg.seed, Stream::Init, t as u64))?;
            train_classifier(&mut learner, &inputs, train.labels(), &train_config(cfg, cfg.epochs, t), |_, _| Ok(()))?;
            elapsed += start.elapsed();
            f_train.axpy(1.0, &learner.predict(&inputs)?)?;
            f_test.axpy(1.0, &learner.predict(&view.apply_all(test.samples(), t)?)?)?;
            let k = 1.0 / (t + 1) as f64;
            let mean = |f: &Matrix| Matrix::new(f.rows(), f.cols(), f.data().iter().map(|v| v * k).collect());
            self.metrics.push(RoundMetrics {
                round: t,
                alpha: 1.0,
                train_risk: compute_risk(&mean(&f_train)?, train.labels(), cfg.risk)?,
                test_accuracy: accuracy(&mean(&f_test)?, test.labels()),
                feature_fraction: fraction,
                wall_time_s: self.wall(elapsed),
                ..Default::default()
            });
            members.push((view, learner));
        }
        let mut ensemble = Ensemble::new(train.classes(), 1.0, cfg.risk)?;
        let alpha = 1.0 / members.len() as f64;
        for (view, learner) in members {
            ensemble.push(Round { alpha, kind: RoundKind::Additive, view, learner })?;
        }
        Ok(ensemble)
    }

    /// One model trained for `n_b * epochs` epochs on true labels. The
    /// subsequence baseline first drops a random `1 - sigma` share of the
    /// training vocabulary.
    fn single_model(&mut self) -> boostkit_core::Result<Ensemble> {
        let cfg = self.cfg;
        let (train, test) = (self.train, self.test);
        let (view, fraction) = if cfg.variant == Variant::SubsequenceBaseline {
            let content: Vec<u32> = train.vocabulary().into_iter().filter(|&t| t != CLS_TOKEN).collect();
            let keep = keep_count(cfg.sigma, content.len());
            let mut rng = rng_for(cfg.seed, Stream::Baseline, 0);
            let kept = sample_indices(&mut rng, content.len(), keep).into_iter().map(|i| content[i]);
            let vocab = Vocabulary::new(kept, CLS_TOKEN, 1);
            let fraction = vocab.content_len() as f64 / content.len() as f64;
            (FeatureView::Vocabulary { vocab }, fraction)
        } else {
            (FeatureView::Full, 1.0)
        };
        let train_in = view.apply_all(train.samples(), 0)?;
        let test_in = view.apply_all(test.samples(), 0)?;
        let mut learner = self.family.fresh(image_grid(&train_in), derive_seed(cfg.seed, Stream::Init, 0))?;
        let tc = train_config(cfg, cfg.n_b * cfg.epochs, 0);
        let start = Instant::now();
        let mut excluded = Duration::ZERO;
        let record = cfg.record_wall_time;
        let metrics = &mut self.metrics;
        train_classifier(&mut learner, &train_in, train.labels(), &tc, |epoch, l| {
            let pause = Instant::now();
            let wall = start.elapsed().saturating_sub(excluded);
            metrics.push(RoundMetrics {
                round: epoch,
                alpha: 1.0,
                train_risk: compute_risk(&l.predict(&train_in)?, train.labels(), cfg.risk)?,
                test_accuracy: accuracy(&l.predict(&test_in)?, test.labels()),
                feature_fraction: fraction,
                wall_time_s: record.then_some(wall.as_secs_f64()),
                ..Default::default()
            });
            excluded += pause.elapsed();
            Ok(())
        })?;
        let mut ensemble = Ensemble::new(train.classes(), cfg.nu, cfg.risk)?;
        ensemble.push(Round { alpha: 1.0, kind: RoundKind::Basic, view, learner })?;
        Ok(ensemble)
    }
}

/// Writes the metrics and checkpoint of a finished run into `dir`.
pub fn write_run(out: &RunOutput, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    emit_metrics_csv(&out.metrics, dir.join(METRICS_FILE))?;
    out.ensemble.save(dir.join(CHECKPOINT_DIR))?;
    Ok(())
}
