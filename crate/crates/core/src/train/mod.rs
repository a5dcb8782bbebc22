//! Losses, Adam, the training loop, evaluation and checkpoints.

mod adam;
pub mod checkpoint;
mod loss;

use std::fmt::Write as _;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, LoadedCheckpoint};
pub use loss::{LossKind, DICE_SMOOTH};

use crate::autodiff::{Graph, HasParams};
use crate::data::{self, SamplePair};
use crate::error::{Error, Result};
use crate::metrics::{fmt_assd_csv, Aggregate, BinaryMask, MetricsReport};
use crate::model::HybridUNet;
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub loss: LossKind,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Seeds weight initialization and the per-epoch shuffles.
    pub seed: u64,
    /// Validate every this many epochs, and always after the last one.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 2,
            lr: 2e-3,
            loss: LossKind::DiceBce,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            eval_every: 10,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, beta1: self.beta1, beta2: self.beta2, eps: self.eps }
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_allowing_zero_lr()?;
        if self.lr <= 0.0 {
            return Err(Error::Config(format!("lr must be > 0, got {}", self.lr)));
        }
        Ok(())
    }

    /// A zero learning rate is useful for dry runs through the library.
    fn validate_allowing_zero_lr(&self) -> Result<()> {
        if !self.lr.is_finite() || self.lr < 0.0 {
            return Err(Error::Config(format!("lr must be finite and non-negative, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be >= 1".into()));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must be in [0, 1), got {b}")));
            }
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return Err(Error::Config(format!("eps must be > 0, got {}", self.eps)));
        }
        Ok(())
    }
}

/// One history row.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    /// Sample-weighted mean training loss over the epoch.
    pub loss: f64,
    pub val: Option<Aggregate>,
}

pub const HISTORY_HEADER: &str = "epoch,loss,val_dice,val_iou,val_assd,val_assd_undefined";

impl EpochStats {
    pub fn csv_row(&self) -> String {
        match &self.val {
            Some(v) => format!(
                "{},{:.6},{:.6},{:.6},{},{}",
                self.epoch,
                self.loss,
                v.dice,
                v.iou,
                fmt_assd_csv(v.assd),
                v.assd_undefined
            ),
            None => format!("{},{:.6},,,,", self.epoch, self.loss),
        }
    }
}

pub fn history_csv(history: &[EpochStats]) -> String {
    let mut out = format!("{HISTORY_HEADER}\n");
    for row in history {
        let _ = writeln!(out, "{}", row.csv_row());
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: Vec<EpochStats>,
    pub adam: Adam<f32>,
}

/// Trains `model` in place. `on_epoch` sees each history row as it is made.
///
/// Samples are reshuffled every epoch from a stream seeded by `cfg.seed`; the
/// last partial batch is kept.
pub fn train(
    model: &mut HybridUNet<f32>,
    train_set: &[SamplePair],
    val_set: &[SamplePair],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    cfg.validate_allowing_zero_lr()?;
    let Some(first) = train_set.first() else {
        return Err(Error::Dataset("training set is empty".into()));
    };
    model.check_input(first.image.shape().dims())?;

    let mut adam = Adam::new(cfg.adam(), model.params());
    let mut shuffle = SplitMix64::new(cfg.seed).fork(1);
    let n = train_set.len();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        shuffle.shuffle(&mut order);
        let mut total = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let (images, masks) = data::batch(chunk.iter().map(|&i| &train_set[i]))?;
            let loss = train_step(model, &mut adam, &images, &masks, cfg.loss).map_err(|e| match e {
                Error::NonFinite { .. } | Error::NonFiniteGradient(_) => {
                    Error::Diverged { epoch, batch: b + 1, reason: e.to_string() }
                }
                other => other,
            })?;
            total += loss * chunk.len() as f64;
        }
        let val = if !val_set.is_empty() && (epoch % cfg.eval_every == 0 || epoch == cfg.epochs) {
            Some(evaluate(model, val_set)?.aggregate)
        } else {
            None
        };
        let stats = EpochStats { epoch, loss: total / n as f64, val };
        on_epoch(&stats);
        history.push(stats);
    }
    Ok(TrainOutcome { history, adam })
}

/// Zeroes gradients, runs forward and backward on one batch and applies Adam.
/// Returns the batch loss.
pub fn train_step(
    model: &mut HybridUNet<f32>,
    adam: &mut Adam<f32>,
    images: &Tensor<f32>,
    masks: &Tensor<f32>,
    kind: LossKind,
) -> Result<f64> {
    model.params_mut().zero_grads();
    let mut g = Graph::new();
    let x = g.input(images.clone());
    let logits = model.forward(&mut g, x)?;
    let loss = g.segmentation_loss(kind, logits, masks)?;
    let value = g.value(loss).item() as f64;
    g.backward_into(loss, model.params_mut())?;
    adam.step(model.params_mut())?;
    Ok(value)
}

/// Anything that turns an image `[1, c, h, w]` into a mask.
pub trait Segmenter {
    fn segment(&self, image: &Tensor<f32>) -> Result<BinaryMask>;
}

impl Segmenter for HybridUNet<f32> {
    /// Foreground where the sigmoid probability exceeds 0.5.
    fn segment(&self, image: &Tensor<f32>) -> Result<BinaryMask> {
        Ok(BinaryMask::from_logits(&self.predict(image)?, 0.5))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleMetrics {
    pub id: String,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub rows: Vec<SampleMetrics>,
    pub aggregate: Aggregate,
}

pub const EVAL_HEADER: &str = "id,iou,dice,assd,accuracy";

impl Evaluation {
    /// Per-sample rows followed by a `mean` row.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{EVAL_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{}", r.id, r.report.to_csv_row());
        }
        let _ = writeln!(out, "mean,{}", self.aggregate.to_csv_row());
        out
    }
}

pub fn evaluate(model: &impl Segmenter, samples: &[SamplePair]) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(Error::Dataset("cannot evaluate an empty sample list".into()));
    }
    let rows = samples
        .iter()
        .map(|s| {
            let pred = model.segment(&s.image)?;
            Ok(SampleMetrics { id: s.id.clone(), report: MetricsReport::compute(&pred, &s.mask)? })
        })
        .collect::<Result<Vec<_>>>()?;
    let aggregate = Aggregate::from_reports(rows.iter().map(|r| &r.report)).expect("non-empty");
    Ok(Evaluation { rows, aggregate })
}
