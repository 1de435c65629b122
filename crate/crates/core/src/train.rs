//! Mini-batch training with Adam, seeded augmentation and best-validation
//! retention.

use log::{debug, info};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use phenocast_tensor::{rng, Adam, Tape};

use crate::data::SplitSet;
use crate::error::{Error, Result};
use crate::eval::metrics;
use crate::model::{LossKind, Model};
use crate::params::ParamStore;
use crate::sampling::{augment, sample_window, AugmentPolicy, TrainingExample, WindowPolicy};

/// Learning rate as a function of the epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Half-cosine from the initial rate down to `lr_final_fraction` of it.
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_schedule: LrSchedule,
    pub lr_final_fraction: f64,
    /// Windows drawn per training pixel and epoch.
    pub samples_per_pixel: usize,
    /// Fixed windows per pixel for the validation and train-probe sets.
    pub eval_windows_per_pixel: usize,
    /// Evaluate every this many epochs; the last epoch is always evaluated.
    pub eval_every: usize,
    /// Fraction of training pixels held out for validation.
    pub val_fraction: f64,
    /// Global gradient-norm cap; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub loss: LossKind,
    /// Configured in its own section of a run configuration.
    #[serde(skip)]
    pub augment: AugmentPolicy,
    #[serde(skip)]
    pub window: WindowPolicy,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 150,
            batch_size: 64,
            learning_rate: 2e-4,
            lr_schedule: LrSchedule::Constant,
            lr_final_fraction: 0.05,
            samples_per_pixel: 1,
            eval_windows_per_pixel: 1,
            eval_every: 1,
            val_fraction: 0.1,
            grad_clip: None,
            loss: LossKind::Mae,
            augment: AugmentPolicy::default(),
            window: WindowPolicy::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("train: epochs and batch_size must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!(
                "train.learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..=1.0).contains(&self.lr_final_fraction) {
            return Err(Error::config("train.lr_final_fraction must lie in [0, 1]"));
        }
        if self.samples_per_pixel == 0 || self.eval_windows_per_pixel == 0 || self.eval_every == 0 {
            return Err(Error::config(
                "train: samples_per_pixel, eval_windows_per_pixel and eval_every must be positive",
            ));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::config("train.val_fraction must lie in [0, 1)"));
        }
        if self.grad_clip.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::config("train.grad_clip must be positive"));
        }
        self.augment.validate()?;
        self.window.validate()
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.learning_rate,
            LrSchedule::Cosine => {
                let progress = if self.epochs > 1 { epoch as f64 / (self.epochs - 1) as f64 } else { 0.0 };
                let floor = self.lr_final_fraction;
                self.learning_rate * (floor + (1.0 - floor) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
            }
        }
    }
}

/// Metrics of one epoch. Evaluation fields are `None` on skipped epochs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-example training loss under augmentation and dropout.
    pub train_loss: f64,
    /// Evaluation-mode MAE and R² on the fixed train probe windows.
    pub train_mae: Option<f64>,
    pub train_r2: Option<f64>,
    pub val_mae: Option<f64>,
    pub val_r2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_val_mae: Option<f64>,
    pub steps: u64,
}

const TAG_WINDOW: u64 = 0x3157;
const TAG_SHUFFLE: u64 = 0x5e4f;
const TAG_DROPOUT: u64 = 0xd407;
const TAG_PROBE: u64 = 0x9a0b;

/// Deterministic windows, `per_pixel` from every series, without masking.
pub fn fixed_windows(split: &SplitSet, policy: &WindowPolicy, per_pixel: usize, seed: u64) -> Result<Vec<TrainingExample>> {
    let mut out = Vec::new();
    for series in &split.series {
        let mut r = rng::stream_for(seed, &[TAG_PROBE, series.pixel_id]);
        for _ in 0..per_pixel {
            if let Some(ex) = sample_window(series, split, policy, &mut r)? {
                out.push(ex);
            }
        }
    }
    Ok(out)
}

/// Augmented windows of one epoch, in shuffled order.
pub fn epoch_examples(split: &SplitSet, cfg: &TrainConfig, epoch: usize) -> Result<Vec<TrainingExample>> {
    let mut out = Vec::with_capacity(split.series.len() * cfg.samples_per_pixel);
    for series in &split.series {
        let mut r = rng::stream_for(cfg.seed, &[TAG_WINDOW, epoch as u64, series.pixel_id]);
        for _ in 0..cfg.samples_per_pixel {
            if let Some(ex) = sample_window(series, split, &cfg.window, &mut r)? {
                let (ex, _) = augment(ex, &cfg.augment, &mut r)?;
                out.push(ex);
            }
        }
    }
    out.shuffle(&mut rng::stream_for(cfg.seed, &[TAG_SHUFFLE, epoch as u64]));
    Ok(out)
}

/// Evaluation-mode MAE and R² (R² is `None` for constant truths).
pub fn evaluate(model: &Model, examples: &[TrainingExample]) -> Result<(f64, Option<f64>)> {
    let preds = model.predict_all(examples)?;
    let truths: Vec<f64> = examples.iter().map(|e| e.target_value).collect();
    Ok((metrics::mae(&preds, &truths)?, metrics::r2(&preds, &truths).ok()))
}

fn clip_gradients(params: &mut ParamStore, max_norm: f64) {
    let norm = params
        .tensors()
        .iter()
        .filter_map(|t| t.grad())
        .flatten()
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for t in params.tensors_mut() {
            let g: Vec<f64> = t.grad().map(|g| g.iter().map(|v| v * (s - 1.0)).collect()).unwrap_or_default();
            if !g.is_empty() {
                t.accumulate_grad(&g).expect("gradient shape");
            }
        }
    }
}

fn non_finite_grads(params: &ParamStore) -> Vec<String> {
    params
        .names()
        .iter()
        .zip(params.tensors())
        .filter(|(_, t)| t.grad().is_some_and(|g| g.iter().any(|v| !v.is_finite())))
        .map(|(n, _)| n.clone())
        .collect()
}

/// Trains `model` in place. `on_epoch` sees every record as it is produced.
///
/// When a validation set is given the parameters of the epoch with the
/// lowest validation MAE are restored at the end.
pub fn train(
    model: &mut Model,
    train_set: &SplitSet,
    val_set: Option<&SplitSet>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainHistory> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::config("training set has no admissible targets"));
    }
    let probe = fixed_windows(train_set, &cfg.window, cfg.eval_windows_per_pixel, cfg.seed)?;
    let val = match val_set {
        Some(v) if !v.is_empty() => fixed_windows(v, &cfg.window, cfg.eval_windows_per_pixel, cfg.seed ^ 0x7a1)?,
        _ => Vec::new(),
    };
    info!(
        "training {} parameters; {} train pixels, {} probe and {} validation windows",
        model.params.scalar_count(),
        train_set.series.len(),
        probe.len(),
        val.len()
    );

    let mut adam = Adam::new(cfg.learning_rate)?;
    let mut history = TrainHistory::default();
    let mut best: Option<ParamStore> = None;

    for epoch in 0..cfg.epochs {
        adam.learning_rate = cfg.learning_rate_at(epoch);
        let examples = epoch_examples(train_set, cfg, epoch)?;
        if examples.is_empty() {
            return Err(Error::config("no training window fits the configured window policy"));
        }
        let mut loss_sum = 0.0;
        for (batch_id, batch) in examples.chunks(cfg.batch_size).enumerate() {
            let mut tape = Tape::new();
            let bindings = model.params.bind(&mut tape);
            let mut drop_rng = rng::stream_for(cfg.seed, &[TAG_DROPOUT, epoch as u64, batch_id as u64]);
            let loss = model.batch_loss(&mut tape, &bindings, batch, cfg.loss, true, &mut drop_rng)?;
            let value = tape.item(loss);
            if !value.is_finite() {
                return Err(Error::NonFinite {
                    epoch,
                    step: history.steps,
                    batch: batch_id,
                    detail: format!("batch loss {value}"),
                });
            }
            tape.backward(loss)?;
            model.params.zero_grad();
            model.params.collect_grads(&tape, &bindings)?;
            let bad = non_finite_grads(&model.params);
            if !bad.is_empty() {
                return Err(Error::NonFinite {
                    epoch,
                    step: history.steps,
                    batch: batch_id,
                    detail: format!("non-finite gradients in {}", bad.join(", ")),
                });
            }
            if let Some(c) = cfg.grad_clip {
                clip_gradients(&mut model.params, c);
            }
            adam.step(model.params.tensors_mut())?;
            history.steps += 1;
            loss_sum += value * batch.len() as f64;
        }

        let mut record = EpochRecord {
            epoch,
            train_loss: loss_sum / examples.len() as f64,
            train_mae: None,
            train_r2: None,
            val_mae: None,
            val_r2: None,
        };
        if (epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.epochs {
            if !probe.is_empty() {
                let (m, r) = evaluate(model, &probe)?;
                record.train_mae = Some(m);
                record.train_r2 = r;
            }
            if !val.is_empty() {
                let (m, r) = evaluate(model, &val)?;
                record.val_mae = Some(m);
                record.val_r2 = r;
                if history.best_val_mae.is_none_or(|b| m < b) {
                    history.best_val_mae = Some(m);
                    history.best_epoch = Some(epoch);
                    best = Some(model.params.clone());
                }
            }
        }
        debug!("{record:?}");
        info!(
            "epoch {epoch}: loss {:.5} train_mae {} val_mae {}",
            record.train_loss,
            fmt_opt(record.train_mae),
            fmt_opt(record.val_mae)
        );
        on_epoch(&record);
        history.epochs.push(record);
    }

    if let Some(best) = best {
        model.params.load_values(&best)?;
    }
    model.params.zero_grad();
    Ok(history)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.5}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { epochs: 0, ..TrainConfig::default() },
            TrainConfig { batch_size: 0, ..TrainConfig::default() },
            TrainConfig { learning_rate: 0.0, ..TrainConfig::default() },
            TrainConfig { grad_clip: Some(-1.0), ..TrainConfig::default() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn cosine_schedule_endpoints() {
        let cfg = TrainConfig {
            epochs: 11,
            learning_rate: 1e-3,
            lr_schedule: LrSchedule::Cosine,
            lr_final_fraction: 0.1,
            ..TrainConfig::default()
        };
        assert!((cfg.learning_rate_at(0) - 1e-3).abs() < 1e-18);
        assert!((cfg.learning_rate_at(5) - 0.55e-3).abs() < 1e-15);
        assert!((cfg.learning_rate_at(10) - 1e-4).abs() < 1e-15);
        let constant = TrainConfig::default();
        assert_eq!(constant.learning_rate_at(99), 2e-4);
    }
}
