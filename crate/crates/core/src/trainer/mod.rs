//! Periodicity pretext training of the adapter.
//!
//! Encoder features are computed once per sample and cached; each step runs
//! the adapter and the frozen language model forward, back-propagates to the
//! adapter parameters through the language model's input, and applies Adam.
//! Steps are strictly serial and every reduction has a fixed order, so two
//! runs with the same seeds produce identical parameters.

pub mod gradcheck;
pub mod loss;
pub mod optim;

use std::io::Write;
use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::adapter::nn::Mode;
use crate::adapter::{apply_updates, Adapter, AdapterParams};
use crate::backbone::{EmbeddingBackbone, SeriesEncoder};
use crate::error::{Result, T2lError};
use crate::pipeline::encode_all;
use crate::real::Real;
use crate::seed::{self, streams};
use crate::synthgen::{Split, SyntheticDataset};

pub use gradcheck::{gradient_check, GradCheckConfig, GradCheckReport};
pub use loss::{cross_entropy, softmax_cross_entropy};
pub use optim::{clip_grad_norm, Adam, AdamConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub eval_every: usize,
    /// Optional L2 cap on the gradient norm; off by default.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 25,
            batch_size: 16,
            learning_rate: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            eval_every: 1,
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    pub fn desk() -> Self {
        TrainConfig {
            epochs: 10,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.eval_every == 0 {
            return Err(T2lError::invalid("epochs, batch_size and eval_every must be >= 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(T2lError::invalid(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return Err(T2lError::invalid("adam betas must be in [0, 1) and eps > 0"));
        }
        if matches!(self.grad_clip, Some(c) if !(c > 0.0)) {
            return Err(T2lError::invalid("grad_clip must be > 0"));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

/// Cached encoder features of one split.
pub struct SplitFeatures {
    pub indices: Vec<usize>,
    pub features: Vec<Array2<f32>>,
    pub labels: Vec<usize>,
}

impl SplitFeatures {
    pub fn encode(dataset: &SyntheticDataset, split: Split, tfm: &dyn SeriesEncoder) -> Result<Self> {
        Self::encode_indices(dataset, dataset.indices(split), tfm)
    }

    pub fn encode_indices(dataset: &SyntheticDataset, indices: Vec<usize>, tfm: &dyn SeriesEncoder) -> Result<Self> {
        let series: Vec<&[f32]> = indices.iter().map(|&i| dataset.samples[i].series.as_slice()).collect();
        let features = encode_all(tfm, &series)?;
        let labels = indices.iter().map(|&i| dataset.samples[i].period_class).collect();
        Ok(SplitFeatures {
            indices,
            features,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn views(&self, idx: &[usize]) -> Vec<ArrayView2<'_, f32>> {
        idx.iter().map(|&i| self.features[i].view()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMetrics {
    /// Eval-mode loss over the train split before the first update.
    pub initial_loss: f64,
    pub epochs: Vec<EpochMetrics>,
    pub best_epoch: usize,
}

pub struct TrainResult {
    pub params: AdapterParams<f32>,
    pub metrics: TrainMetrics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretextEval {
    pub loss: f64,
    pub accuracy: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

pub fn confusion_matrix(labels: &[usize], predictions: &[usize], classes: usize) -> Vec<Vec<usize>> {
    let mut m = vec![vec![0; classes]; classes];
    for (&y, &p) in labels.iter().zip(predictions) {
        m[y][p] += 1;
    }
    m
}

pub fn accuracy(labels: &[usize], predictions: &[usize]) -> f64 {
    let hits = labels.iter().zip(predictions).filter(|(a, b)| a == b).count();
    hits as f64 / labels.len().max(1) as f64
}

/// Eval-mode loss, accuracy and confusion matrix over cached features.
pub fn evaluate_pretext<T: Real>(
    adapter: &Adapter,
    params: &AdapterParams<T>,
    llm: &dyn EmbeddingBackbone<T>,
    data: &SplitFeatures,
    batch_size: usize,
) -> Result<PretextEval> {
    if data.is_empty() {
        return Err(T2lError::EmptyDataset("evaluation split is empty".into()));
    }
    let order: Vec<usize> = (0..data.len()).collect();
    let mut total = 0.0;
    let mut preds = Vec::with_capacity(data.len());
    for idx in order.chunks(batch_size.max(1)) {
        let labels: Vec<usize> = idx.iter().map(|&i| data.labels[i]).collect();
        let (out, _, _) = adapter.forward(params, llm, &data.views(idx), true, &mut Mode::Eval)?;
        let (l, _) = softmax_cross_entropy(out.logits.view(), &labels)?;
        total += l * idx.len() as f64;
        preds.extend(out.logits.columns().into_iter().map(|c| loss::argmax(c.iter().copied())));
    }
    let classes = adapter.config().num_classes;
    Ok(PretextEval {
        loss: total / data.len() as f64,
        accuracy: accuracy(&data.labels, &preds),
        confusion: confusion_matrix(&data.labels, &preds, classes),
    })
}

/// Train the adapter. `on_epoch` sees each epoch's metrics together with the
/// best parameters so far, which is the checkpoint to keep if a later step
/// diverges.
pub fn fit(
    adapter: &Adapter,
    llm: &dyn EmbeddingBackbone<f32>,
    train: &SplitFeatures,
    val: &SplitFeatures,
    config: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochMetrics, &AdapterParams<f32>),
) -> Result<TrainResult> {
    config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(T2lError::EmptyDataset("training needs non-empty train and val splits".into()));
    }
    let mut params = adapter.init_params::<f32>();
    let mut adam = Adam::new(config.adam(), params.params.len());
    let initial_loss = evaluate_pretext(adapter, &params, llm, train, config.batch_size)?.loss;
    log::info!("initial train loss {initial_loss:.4}");
    let mut best: Option<(f64, usize, AdapterParams<f32>)> = None;
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=config.epochs {
        let start = Instant::now();
        order.sort_unstable();
        order.shuffle(&mut seed::child_rng(config.seed, streams::SHUFFLE, epoch as u64));
        let mut dropout_rng = seed::child_rng(config.seed, streams::DROPOUT, epoch as u64);
        let (mut loss_sum, mut seen, mut hits) = (0.0, 0usize, 0usize);
        for (step, idx) in order.chunks(config.batch_size).enumerate() {
            // Batch statistics are undefined for a single sample.
            if idx.len() < 2 {
                continue;
            }
            let labels: Vec<usize> = idx.iter().map(|&i| train.labels[i]).collect();
            let mut mode = Mode::Train {
                rng: &mut dropout_rng,
                dropout: adapter.config().dropout,
            };
            let (out, tape, updates) = adapter.forward(&params, llm, &train.views(idx), true, &mut mode)?;
            let (loss, dlogits) = softmax_cross_entropy(out.logits.view(), &labels)?;
            if !loss.is_finite() {
                return Err(T2lError::TrainingDiverged { epoch, step });
            }
            let mut grad = adapter.backward(&params, llm, &tape, &dlogits)?;
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(T2lError::TrainingDiverged { epoch, step });
            }
            if let Some(c) = config.grad_clip {
                clip_grad_norm(&mut grad, c);
            }
            adam.step(&mut params.params, &grad);
            apply_updates(&mut params.buffers, &updates);
            loss_sum += loss * idx.len() as f64;
            seen += idx.len();
            hits += out
                .logits
                .columns()
                .into_iter()
                .zip(&labels)
                .filter(|(c, &y)| loss::argmax(c.iter().copied()) == y)
                .count();
        }
        let (val_loss, val_accuracy) = if epoch % config.eval_every == 0 || epoch == config.epochs {
            let ev = evaluate_pretext(adapter, &params, llm, val, config.batch_size)?;
            (Some(ev.loss), Some(ev.accuracy))
        } else {
            (None, None)
        };
        if let Some(vl) = val_loss {
            if best.as_ref().is_none_or(|(b, _, _)| vl < *b) {
                best = Some((vl, epoch, params.clone()));
            }
        }
        let m = EpochMetrics {
            epoch,
            train_loss: loss_sum / seen.max(1) as f64,
            train_accuracy: hits as f64 / seen.max(1) as f64,
            val_loss,
            val_accuracy,
            seconds: start.elapsed().as_secs_f64(),
        };
        log::debug!("{m:?}");
        on_epoch(&m, best.as_ref().map_or(&params, |b| &b.2));
        epochs.push(m);
    }
    let (_, best_epoch, params) = best.expect("final epoch is always evaluated");
    Ok(TrainResult {
        params,
        metrics: TrainMetrics {
            initial_loss,
            epochs,
            best_epoch,
        },
    })
}

/// One JSON object per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub accuracy: f64,
    pub seconds: f64,
}

pub fn metric_records(m: &EpochMetrics) -> Vec<MetricRecord> {
    let mut out = vec![MetricRecord {
        epoch: m.epoch,
        split: "train".into(),
        loss: m.train_loss,
        accuracy: m.train_accuracy,
        seconds: m.seconds,
    }];
    if let (Some(loss), Some(accuracy)) = (m.val_loss, m.val_accuracy) {
        out.push(MetricRecord {
            epoch: m.epoch,
            split: "val".into(),
            loss,
            accuracy,
            seconds: m.seconds,
        });
    }
    out
}

pub fn write_metrics<W: Write>(w: &mut W, m: &EpochMetrics) -> Result<()> {
    for r in metric_records(m) {
        serde_json::to_writer(&mut *w, &r)?;
        writeln!(w).map_err(|e| T2lError::io("<metrics>", e))?;
    }
    w.flush().map_err(|e| T2lError::io("<metrics>", e))
}

#[cfg(test)]
mod tests;
