//! Adam and the epoch loop with best-validation selection.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, CheckpointMeta};
use crate::data::Dataset;
use crate::error::{bail, Result};
use crate::metrics::{auc, compute_metrics, confusion, roc_curve, ConfusionMatrix, MetricsReport};
use crate::model::FusionModel;
use crate::params::ParamStore;
use crate::rng::Rng;
use crate::tensor::{Element, Graph};

/// Stream offset separating dropout masks from the per-epoch shuffles.
const DROPOUT_STREAM: u64 = 1 << 32;

/// Samples per forward pass during evaluation; only bounds memory.
const EVAL_CHUNK: usize = 32;

fn default_batch_size() -> usize {
    16
}
fn default_lr() -> f64 {
    0.003
}
fn default_epochs() -> usize {
    50
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub epsilon: f64,
    #[serde(default)]
    pub seed: u64,
    /// Keep the epoch with the highest validation accuracy. When off, the
    /// last epoch is kept and the validation set may be empty.
    #[serde(default = "default_true")]
    pub select_best: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: default_batch_size(),
            learning_rate: default_lr(),
            epochs: default_epochs(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_eps(),
            seed: 0,
            select_best: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            bail!(Config, "batch_size must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            bail!(Config, "learning_rate must be positive, got {}", self.learning_rate);
        }
        if self.epochs == 0 {
            bail!(Config, "epochs must be at least 1");
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                bail!(Config, "{name} must lie in (0, 1), got {b}");
            }
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            bail!(Config, "epsilon must be positive, got {}", self.epsilon);
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        TrainConfig::default().adam()
    }
}

/// First and second moments per parameter slot.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub t: u64,
}

impl<T: Element> AdamState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        let zeros = || params.iter().map(|(_, p)| vec![T::zero(); p.value.len()]).collect();
        Self {
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update of every trainable parameter.
pub fn adam_step<T: Element>(params: &mut ParamStore<T>, state: &mut AdamState<T>, cfg: &AdamConfig) -> Result<()> {
    if state.m.len() != params.len() {
        bail!(Training, "optimizer state covers {} parameters, model has {}", state.m.len(), params.len());
    }
    for (slot, (name, p)) in params.iter().enumerate() {
        if p.requires_grad && p.grad.is_none() {
            bail!(Training, "parameter {name} has no gradient");
        }
        if state.m[slot].len() != p.value.len() {
            bail!(Training, "optimizer state for {name} has the wrong size");
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (T::from_f64(cfg.beta1), T::from_f64(cfg.beta2));
    let (one_b1, one_b2) = (T::from_f64(1.0 - cfg.beta1), T::from_f64(1.0 - cfg.beta2));
    let c1 = T::from_f64(1.0 - cfg.beta1.powi(t));
    let c2 = T::from_f64(1.0 - cfg.beta2.powi(t));
    let lr = T::from_f64(cfg.learning_rate);
    let eps = T::from_f64(cfg.epsilon);
    for (slot, (_, p)) in params.iter_mut().enumerate() {
        if !p.requires_grad {
            continue;
        }
        let grad = p.grad.as_ref().expect("checked above");
        let (m, v) = (&mut state.m[slot], &mut state.v[slot]);
        for (((theta, &g), m), v) in p.value.data_mut().iter_mut().zip(grad).zip(m).zip(v) {
            *m = b1 * *m + one_b1 * g;
            *v = b2 * *v + one_b2 * g * g;
            let step = lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            // Skipping zero steps keeps parameters bit-identical (even -0.0).
            if step != T::zero() {
                *theta -= step;
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: Option<f64>,
    /// Wall-clock seconds since training began; excluded from serialized
    /// records so that reruns stay byte-identical.
    #[serde(skip)]
    pub elapsed_secs: f64,
}

impl EpochRecord {
    pub fn to_json_line(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose weights were kept.
    pub best_epoch: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl TrainRecord {
    /// One JSON object per epoch, newline terminated.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.epochs {
            out.push_str(&e.to_json_line()?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn best(&self) -> &EpochRecord {
        &self.epochs[self.best_epoch - 1]
    }
}

/// Hooks into the training loop; every method defaults to doing nothing.
pub trait TrainObserver {
    /// Called after each optimizer step with the dataset indices of the batch.
    fn on_batch(&mut self, _epoch: usize, _batch: usize, _indices: &[usize], _loss: f64) {}
    fn on_epoch(&mut self, _record: &EpochRecord) {}
}

impl TrainObserver for () {}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome<T> {
    pub best: Checkpoint<T>,
    pub record: TrainRecord,
}

/// Fraction of `dataset` the model classifies correctly, dropout off.
pub fn accuracy<T: Element>(model: &FusionModel<T>, dataset: &Dataset) -> Result<f64> {
    let (preds, labels) = predict_dataset(model, dataset)?;
    let hard: Vec<u8> = preds.iter().map(|&(c, _)| u8::from(c == 1)).collect();
    let cm = confusion(&hard, &labels)?;
    Ok(cm.correct() as f64 / cm.total() as f64)
}

/// `(predicted class, positive probability)` per sample, plus labels.
type Predictions = (Vec<(usize, f64)>, Vec<u8>);

fn predict_dataset<T: Element>(model: &FusionModel<T>, dataset: &Dataset) -> Result<Predictions> {
    if dataset.is_empty() {
        bail!(Data, "cannot evaluate on an empty dataset");
    }
    let mut out = Vec::with_capacity(dataset.len());
    let indices: Vec<usize> = (0..dataset.len()).collect();
    for chunk in indices.chunks(EVAL_CHUNK) {
        let (x, _) = dataset.batch::<T>(chunk)?;
        let pred = model.predict(&x)?;
        out.extend(pred.predicted_class.into_iter().zip(pred.positive_prob));
    }
    Ok((out, dataset.labels()))
}

pub fn train<T: Element>(
    model: &mut FusionModel<T>,
    train_set: &Dataset,
    val_set: &Dataset,
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if train_set.is_empty() {
        bail!(Data, "training split is empty");
    }
    if val_set.is_empty() && cfg.select_best {
        bail!(Data, "validation split is empty but best-epoch selection is on");
    }
    let started = Instant::now();
    let adam = cfg.adam();
    let mut state = AdamState::new(model.params());
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, Option<f64>, ParamStore<T>)> = None;

    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        Rng::stream(cfg.seed, epoch as u64).shuffle(&mut order);
        let mut dropout_rng = Rng::stream(cfg.seed, DROPOUT_STREAM + epoch as u64);
        let mut loss_sum = 0.0;
        for (b, indices) in order.chunks(cfg.batch_size).enumerate() {
            let (x, labels) = train_set.batch::<T>(indices)?;
            let mut g = Graph::new();
            let xv = g.constant(x);
            let (_, log_probs) = model.forward(&mut g, xv, true, &mut dropout_rng)?;
            let loss = g.nll_loss(log_probs, &labels)?;
            let value = g.value(loss).data()[0].as_f64();
            if !value.is_finite() {
                return Err(crate::Error::NonFinite { epoch, batch: b + 1 });
            }
            g.backward(loss)?;
            let params = model.params_mut();
            params.zero_grad();
            params.accumulate_grads(&g);
            adam_step(params, &mut state, &adam)?;
            loss_sum += value * indices.len() as f64;
            observer.on_batch(epoch, b + 1, indices, value);
        }
        let val_accuracy = if val_set.is_empty() {
            None
        } else {
            Some(accuracy(model, val_set)?)
        };
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            val_accuracy,
            elapsed_secs: started.elapsed().as_secs_f64(),
        };
        observer.on_epoch(&record);
        epochs.push(record);

        let improves = match (&best, cfg.select_best) {
            (None, _) | (_, false) => true,
            // Strictly greater: ties keep the earlier epoch.
            (Some((_, prev, _)), true) => val_accuracy > *prev,
        };
        if improves {
            best = Some((epoch, val_accuracy, model.params().clone()));
        }
    }

    let (best_epoch, val_accuracy, params) = best.expect("at least one epoch");
    let mut best_params = params;
    best_params.zero_grad();
    Ok(TrainOutcome {
        best: Checkpoint {
            config: model.config().clone(),
            meta: CheckpointMeta {
                epoch: best_epoch,
                val_accuracy,
                seed: cfg.seed,
            },
            params: best_params,
        },
        record: TrainRecord {
            epochs,
            best_epoch,
            adam,
            seed: cfg.seed,
        },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub confusion: ConfusionMatrix,
    pub report: MetricsReport,
    /// Positive-class probability per sample, in dataset order.
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
}

impl Evaluation {
    pub fn accuracy(&self) -> f64 {
        self.confusion.correct() as f64 / self.confusion.total() as f64
    }
}

/// Confusion matrix, all eight metrics and per-sample scores with dropout off.
pub fn evaluate<T: Element>(model: &FusionModel<T>, dataset: &Dataset) -> Result<Evaluation> {
    let (preds, labels) = predict_dataset(model, dataset)?;
    let hard: Vec<u8> = preds.iter().map(|&(c, _)| u8::from(c == 1)).collect();
    let scores: Vec<f64> = preds.iter().map(|&(_, p)| p).collect();
    let cm = confusion(&hard, &labels)?;
    let report = compute_metrics(&cm)?.with_auc(auc(&roc_curve(&scores, &labels)?));
    Ok(Evaluation {
        confusion: cm,
        report,
        scores,
        labels,
    })
}

#[cfg(test)]
mod tests;
