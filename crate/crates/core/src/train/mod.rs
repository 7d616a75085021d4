//! Minibatch training, evaluation and cross-validation.

pub mod cv;
pub mod metrics;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use crate::arch::Model;
use crate::data::ImageSet;
use crate::error::{Error, Result};
use crate::loss::{focal_loss, one_hot, FocalLossConfig};
use crate::optim::{adam_step, AdamState, DEFAULT_LR};
use crate::rng::SeededRng;
use crate::tensor::{argmax_last, Real, Tensor};

pub use metrics::{metrics, summarize, ConfusionMatrix, MetricSummary, MetricsReport};

const SHUFFLE_STREAM: u64 = 0x1u64 << 56;
const HOLDOUT_STREAM: u64 = 0x2u64 << 56;
const EVAL_BATCH: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

impl FromStr for Precision {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "f32" | "32" => Ok(Precision::F32),
            "f64" | "64" => Ok(Precision::F64),
            other => Err(format!("unknown precision `{other}` (expected f32 or f64)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub gamma: f64,
    pub class_weights: Vec<f64>,
    pub seed: u64,
    /// Which scalar type drivers should instantiate; the generic entry
    /// points follow their type parameter.
    pub precision: Precision,
    /// Stop after this many epochs without a lower validation loss.
    pub patience: Option<usize>,
    /// Add the four rotated/flipped variants of every training image.
    pub augment: bool,
    /// Share of the training side held out for validation curves when no
    /// explicit validation set is given. Zero disables the holdout.
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 16,
            lr: DEFAULT_LR,
            gamma: 2.0,
            class_weights: vec![1.0, 1.0],
            seed: 0,
            precision: Precision::F32,
            patience: None,
            augment: false,
            val_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::invalid("TrainConfig", msg));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate {} must be finite and >= 0", self.lr));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad(format!("val_fraction {} must lie in [0, 1)", self.val_fraction));
        }
        self.focal().validate(self.class_weights.len())
    }

    pub fn focal(&self) -> FocalLossConfig {
        FocalLossConfig {
            gamma: self.gamma,
            class_weights: self.class_weights.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
    pub seconds: f64,
    /// Largest `|Σ p - 1|` over every probability row produced this epoch.
    pub prob_row_err: f64,
}

fn row_sum_error<T: Real>(probs: &Tensor<T>) -> f64 {
    let c = probs.shape().last().copied().unwrap_or(1).max(1);
    probs
        .data()
        .chunks_exact(c)
        .map(|row| (row.iter().map(|v| v.as_f64()).sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max)
}

/// Splits `0..n` into (train, holdout) with a seeded shuffle; the holdout
/// gets `floor(n * fraction)` indices.
pub fn holdout_split(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    SeededRng::new(seed ^ HOLDOUT_STREAM).shuffle(&mut idx);
    let held = (n as f64 * fraction).floor() as usize;
    let mut val = idx.split_off(n - held);
    idx.sort_unstable();
    val.sort_unstable();
    (idx, val)
}

struct EvalStats {
    loss: f64,
    correct: usize,
    row_err: f64,
    predictions: Vec<usize>,
    probs: Vec<Vec<f64>>,
}

fn run_eval<T: Real>(model: &Model<T>, set: &ImageSet, focal: Option<&FocalLossConfig>) -> Result<EvalStats> {
    let mut stats = EvalStats {
        loss: 0.0,
        correct: 0,
        row_err: 0.0,
        predictions: Vec::with_capacity(set.len()),
        probs: Vec::with_capacity(set.len()),
    };
    let all: Vec<usize> = (0..set.len()).collect();
    for chunk in all.chunks(EVAL_BATCH) {
        let pass = model.forward(&set.batch_tensor::<T>(chunk)?, false)?;
        if !pass.probs.all_finite() {
            return Err(Error::NonFiniteOutput { op: "evaluate" });
        }
        let labels = set.batch_labels(chunk);
        if let Some(cfg) = focal {
            let y = one_hot::<T>(&labels, model.spec().num_classes)?;
            let (loss, _) = focal_loss(&pass.probs, &y, cfg)?;
            stats.loss += loss.as_f64() * chunk.len() as f64;
        }
        stats.row_err = stats.row_err.max(row_sum_error(&pass.probs));
        let pred = argmax_last(&pass.probs)?;
        stats.correct += pred.iter().zip(&labels).filter(|(p, l)| p == l).count();
        stats.predictions.extend(pred);
        let c = model.spec().num_classes;
        stats
            .probs
            .extend(pass.probs.data().chunks_exact(c).map(|r| r.iter().map(|v| v.as_f64()).collect::<Vec<_>>()));
    }
    if set.len() > 0 {
        stats.loss /= set.len() as f64;
    }
    Ok(stats)
}

/// Class probabilities for every image, in order.
pub fn predict_probs<T: Real>(model: &Model<T>, set: &ImageSet) -> Result<Vec<Vec<f64>>> {
    Ok(run_eval(model, set, None)?.probs)
}

/// Confusion counts with "tumor" as the positive class.
pub fn evaluate<T: Real>(model: &Model<T>, set: &ImageSet) -> Result<ConfusionMatrix> {
    let stats = run_eval(model, set, None)?;
    Ok(ConfusionMatrix::from_predictions(&set.labels, &stats.predictions))
}

/// Trains `model` in place. Without an explicit `val` set a seeded holdout
/// of `cfg.val_fraction` is carved from `train` first; augmentation, when
/// enabled, only touches the remaining training side. `on_epoch` sees each
/// log as it is produced.
pub fn train_model<T: Real>(
    model: &mut Model<T>,
    train: &ImageSet,
    val: Option<&ImageSet>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::invalid("train_model", "empty training set"));
    }
    let focal = cfg.focal();
    focal.validate(model.spec().num_classes)?;

    let carved;
    let (train_side, val) = match val {
        Some(v) => (train.clone(), Some(v)),
        None if cfg.val_fraction > 0.0 => {
            let (tr, va) = holdout_split(train.len(), cfg.val_fraction, cfg.seed);
            if tr.is_empty() {
                return Err(Error::invalid("train_model", "holdout leaves no training samples"));
            }
            carved = train.subset(&va);
            (train.subset(&tr), (!va.is_empty()).then_some(&carved))
        }
        None => (train.clone(), None),
    };
    let train_side = if cfg.augment { train_side.augmented()? } else { train_side };

    let mut adam = AdamState::<T>::new(model.param_shapes(), cfg.lr);
    let mut shuffler = SeededRng::new(cfg.seed ^ SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..train_side.len()).collect();
    let mut logs = Vec::with_capacity(cfg.epochs);
    let mut best_val = f64::INFINITY;
    let mut stale = 0;

    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        shuffler.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut correct = 0;
        let mut row_err: f64 = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let x = train_side.batch_tensor::<T>(batch)?;
            let labels = train_side.batch_labels(batch);
            let pass = model.forward(&x, true)?;
            if !pass.probs.all_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b + 1 });
            }
            let y = one_hot::<T>(&labels, model.spec().num_classes)?;
            let (loss, grad_logits) = focal_loss(&pass.probs, &y, &focal)?;
            if !loss.as_f64().is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b + 1 });
            }
            loss_sum += loss.as_f64() * batch.len() as f64;
            row_err = row_err.max(row_sum_error(&pass.probs));
            correct += argmax_last(&pass.probs)?
                .iter()
                .zip(&labels)
                .filter(|(p, l)| p == l)
                .count();
            let cache = pass.cache.expect("training-mode forward keeps a cache");
            let grads = model.backward(&cache, &grad_logits)?;
            adam_step(&mut model.named_params_mut(), &grads, &mut adam)?;
        }
        let n = train_side.len() as f64;
        let (val_loss, val_acc) = match val {
            Some(v) => {
                let s = run_eval(model, v, Some(&focal))?;
                row_err = row_err.max(s.row_err);
                if !s.loss.is_finite() {
                    return Err(Error::NonFiniteOutput { op: "validation" });
                }
                (Some(s.loss), Some(s.correct as f64 / v.len() as f64))
            }
            None => (None, None),
        };
        let log = EpochLog {
            epoch,
            train_loss: loss_sum / n,
            train_acc: correct as f64 / n,
            val_loss,
            val_acc,
            seconds: start.elapsed().as_secs_f64(),
            prob_row_err: row_err,
        };
        on_epoch(&log);
        logs.push(log);

        if let (Some(patience), Some(vl)) = (cfg.patience, val_loss) {
            if vl < best_val {
                best_val = vl;
                stale = 0;
            } else {
                stale += 1;
                if stale >= patience {
                    break;
                }
            }
        }
    }
    Ok(logs)
}
