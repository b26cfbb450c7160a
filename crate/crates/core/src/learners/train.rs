//! Mini-batch ADAM training against boosting-weight targets or true labels.

use boostkit_nn::{adam_step, AdamConfig, Bound, Graph, NnError};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Learner;
use crate::data::{Matrix, Sample};
use crate::error::{CoreError, Result};

/// Learning-rate multiplier over the optimizer steps of one run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Schedule {
    Constant,
    /// Linear warmup over the first `ratio` of steps, then linear decay to 0.
    WarmupLinear { ratio: f64 },
}

impl Schedule {
    fn factor(&self, step: usize, total: usize) -> f64 {
        match *self {
            Schedule::Constant => 1.0,
            Schedule::WarmupLinear { ratio } => {
                let warm = (ratio * total as f64).ceil() as usize;
                if step < warm {
                    (step + 1) as f64 / warm as f64
                } else {
                    (total - step) as f64 / (total - warm).max(1) as f64
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optim: AdamConfig,
    pub schedule: Schedule,
    pub seed: u64,
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(CoreError::InvalidArgument("batch size must be positive".into()));
        }
        if !(self.optim.lr > 0.0) {
            return Err(CoreError::InvalidArgument(format!("learning rate must be positive, got {}", self.optim.lr)));
        }
        if let Schedule::WarmupLinear { ratio } = self.schedule {
            if !(0.0..1.0).contains(&ratio) {
                return Err(CoreError::InvalidArgument(format!("warmup ratio must lie in [0, 1), got {ratio}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub initial_loss: f64,
    /// Mean weighted square loss over all inputs after the last epoch.
    pub final_loss: f64,
    /// Learner outputs on the training inputs after the last epoch.
    pub outputs: Matrix,
}

/// `(1/n) sum_i c_i ||g_i - w_i||^2`.
pub fn mean_square_loss(outputs: &Matrix, targets: &Matrix, weights: Option<&[f64]>) -> f64 {
    let n = outputs.rows();
    let total: f64 = outputs
        .iter_rows()
        .zip(targets.iter_rows())
        .enumerate()
        .map(|(i, (g, w))| weights.map_or(1.0, |c| c[i]) * g.iter().zip(w).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .sum();
    total / n as f64
}

fn diverged(epoch: usize, batch: usize) -> impl Fn(NnError) -> CoreError {
    move |e| match e {
        NnError::NonFiniteGradient(_) => CoreError::Diverged { epoch, batch },
        other => CoreError::Nn(other),
    }
}

/// Runs `epochs` of shuffled mini-batch updates where `batch_loss` builds the
/// scalar loss of one batch of indices.
fn run_epochs(
    learner: &mut Learner,
    n: usize,
    cfg: &TrainConfig,
    mut batch_loss: impl FnMut(&Learner, &mut Graph, &[Bound<'_>], &[usize]) -> Result<boostkit_nn::Var>,
    mut on_epoch: impl FnMut(usize, &Learner) -> Result<()>,
) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let per_epoch = n.div_ceil(cfg.batch_size);
    let total = per_epoch * cfg.epochs;
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
            let mut g = Graph::new();
            let grads: Vec<Vec<Vec<f64>>> = {
                let stores = learner.stores();
                let bound: Vec<Bound<'_>> = stores.into_iter().map(|s| g.bind(s, true)).collect();
                let loss = batch_loss(learner, &mut g, &bound, idx)?;
                if !g.data(loss)[0].is_finite() {
                    return Err(CoreError::Diverged { epoch, batch });
                }
                g.backward(loss)?;
                bound.iter().map(|b| b.grads(&g)).collect()
            };
            let optim = cfg.optim.with_lr(cfg.optim.lr * cfg.schedule.factor(step, total));
            for (store, gr) in learner.stores_mut().into_iter().zip(&grads) {
                adam_step(store, gr, &optim).map_err(diverged(epoch, batch))?;
            }
            step += 1;
        }
        on_epoch(epoch, learner)?;
    }
    Ok(())
}

fn check_targets(learner: &Learner, inputs: &[Sample], targets: &Matrix, loss_weights: Option<&[f64]>) -> Result<()> {
    let n = inputs.len();
    if n == 0 || targets.rows() != n || targets.cols() != learner.classes() {
        return Err(CoreError::ExtentMismatch(format!(
            "{n} inputs against {}x{} targets for a {}-class learner",
            targets.rows(),
            targets.cols(),
            learner.classes()
        )));
    }
    if let Some(c) = loss_weights {
        if c.len() != n || c.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(CoreError::InvalidArgument("loss weights must be finite, nonnegative and one per input".into()));
        }
    }
    Ok(())
}

/// The update loop of [`train_to_weights`] without the evaluation passes
/// before and after, for callers that evaluate the learner themselves.
pub fn fit_to_weights(
    learner: &mut Learner,
    inputs: &[Sample],
    targets: &Matrix,
    loss_weights: Option<&[f64]>,
    cfg: &TrainConfig,
) -> Result<()> {
    cfg.validate()?;
    check_targets(learner, inputs, targets, loss_weights)?;
    let m = targets.cols();
    run_epochs(
        learner,
        inputs.len(),
        cfg,
        |l, g, bound, idx| {
            let batch: Vec<&Sample> = idx.iter().map(|&i| &inputs[i]).collect();
            let y = l.forward(g, bound, &batch)?;
            let mut t = Vec::with_capacity(idx.len() * m);
            for &i in idx {
                t.extend_from_slice(targets.row(i));
            }
            let w: Vec<f64> = idx.iter().map(|&i| loss_weights.map_or(1.0, |c| c[i])).collect();
            Ok(g.weighted_square_loss(y, &t, &w, 1.0 / idx.len() as f64))
        },
        |_, _| Ok(()),
    )
}

/// Minimizes `(1/|B|) sum_{i in B} c_i ||g(x_i) - w_i||^2` over shuffled
/// mini-batches. With `epochs = 0` the learner is untouched and the initial
/// loss is returned as the final loss.
pub fn train_to_weights(
    learner: &mut Learner,
    inputs: &[Sample],
    targets: &Matrix,
    loss_weights: Option<&[f64]>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_targets(learner, inputs, targets, loss_weights)?;
    let initial_loss = mean_square_loss(&learner.predict(inputs)?, targets, loss_weights);
    fit_to_weights(learner, inputs, targets, loss_weights, cfg)?;
    let outputs = learner.predict(inputs)?;
    if !outputs.is_finite() {
        return Err(CoreError::Diverged { epoch: cfg.epochs, batch: 0 });
    }
    let final_loss = if cfg.epochs == 0 { initial_loss } else { mean_square_loss(&outputs, targets, loss_weights) };
    Ok(TrainOutcome { initial_loss, final_loss, outputs })
}

/// Cross-entropy training on true labels, used by the non-boosted baselines.
/// `on_epoch` runs after every epoch with the epoch index and the learner.
pub fn train_classifier(
    learner: &mut Learner,
    inputs: &[Sample],
    labels: &[usize],
    cfg: &TrainConfig,
    on_epoch: impl FnMut(usize, &Learner) -> Result<()>,
) -> Result<()> {
    cfg.validate()?;
    if inputs.is_empty() || labels.len() != inputs.len() {
        return Err(CoreError::ExtentMismatch(format!("{} inputs for {} labels", inputs.len(), labels.len())));
    }
    run_epochs(
        learner,
        inputs.len(),
        cfg,
        |l, g, bound, idx| {
            let batch: Vec<&Sample> = idx.iter().map(|&i| &inputs[i]).collect();
            let y = l.forward(g, bound, &batch)?;
            let z: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            Ok(g.cross_entropy(y, &z))
        },
        on_epoch,
    )
}
