//! Mini-batch training with adaptive-moment updates, a stratified
//! train/validation split, early stopping on validation loss, and
//! restoration of the best checkpoint.

use std::path::Path;

use rand::Rng;
use thiserror::Error;

use crate::manifest::Label;
use crate::model::{FullModel, ModelError, SampleFeatures};
use crate::nn::Adam;
use crate::tensor::concat_vecs;
use crate::Scalar;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation-loss improvement before stopping.
    pub patience: usize,
    /// Share of each class held out for validation; 0 validates on the
    /// training set itself.
    pub validation_fraction: f64,
    pub freeze_encoders: bool,
    /// Stop once validation accuracy reaches this value.
    pub target_val_accuracy: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 50,
            patience: 20,
            validation_fraction: 0.2,
            freeze_encoders: false,
            target_val_accuracy: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training needs at least one sample")]
    EmptyDataset,
    #[error("training needs both classes, got only {0:?} samples")]
    SingleClassDataset(Label),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("cannot write history: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

fn shuffle(indices: &mut [usize], rng: &mut dyn Rng) {
    for i in (1..indices.len()).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        indices.swap(i, j);
    }
}

/// Deterministic stratified split: per class, shuffle then hold out the
/// configured fraction (at least one sample when the fraction is nonzero).
fn split(
    dataset: &[SampleFeatures],
    fraction: f64,
    rng: &mut dyn Rng,
) -> Result<(Vec<usize>, Vec<usize>), TrainError> {
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, s) in dataset.iter().enumerate() {
        by_class[s.label.class_index()].push(i);
    }
    if by_class[0].is_empty() {
        return Err(TrainError::SingleClassDataset(Label::Benign));
    }
    if by_class[1].is_empty() {
        return Err(TrainError::SingleClassDataset(Label::Malicious));
    }
    if fraction == 0.0 {
        let all: Vec<usize> = (0..dataset.len()).collect();
        return Ok((all.clone(), all));
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    for class in &mut by_class {
        shuffle(class, rng);
        let held = ((class.len() as f64 * fraction).round() as usize)
            .clamp(1, class.len() - 1);
        val.extend_from_slice(&class[..held]);
        train.extend_from_slice(&class[held..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok((train, val))
}

pub fn train<T: Scalar>(
    model: &FullModel<T>,
    dataset: &[SampleFeatures],
    cfg: &TrainConfig,
    rng: &mut dyn Rng,
) -> Result<TrainOutcome, TrainError> {
    let (train_idx, val_idx) = split(dataset, cfg.validation_fraction, rng)?;
    let params = model.params(cfg.freeze_encoders);
    let mut adam: Adam<T> = Adam::new(cfg.learning_rate);
    let mut history = Vec::new();
    let mut best_val_loss = f64::INFINITY;
    let mut best_epoch = 0;
    let mut best_values: Vec<Vec<T>> = params.iter().map(|p| p.tensor.to_vec()).collect();
    let mut stale = 0usize;

    for epoch in 0..cfg.max_epochs {
        let mut order = train_idx.clone();
        shuffle(&mut order, rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut losses = Vec::with_capacity(batch.len());
            for &i in batch {
                let sample = &dataset[i];
                let out = model.forward(sample, true, rng)?;
                losses.push(model.loss(&out, sample.label)?);
            }
            let batch_loss = concat_vecs(&losses)
                .map_err(ModelError::from)?
                .sum_all()
                .scale(T::from_f64(1.0 / batch.len() as f64));
            loss_sum += batch_loss.item().into_f64() * batch.len() as f64;
            batch_loss.backward();
            adam.step(&params);
        }
        let train_loss = loss_sum / train_idx.len() as f64;

        let mut val_loss = 0.0;
        let mut correct = 0usize;
        for &i in &val_idx {
            let sample = &dataset[i];
            let out = model.forward(sample, false, rng)?;
            val_loss += model.loss(&out, sample.label)?.item().into_f64();
            if out.predicted_label() == sample.label {
                correct += 1;
            }
        }
        val_loss /= val_idx.len() as f64;
        let val_acc = correct as f64 / val_idx.len() as f64;
        history.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
            val_acc,
        });

        if val_loss < best_val_loss {
            best_val_loss = val_loss;
            best_epoch = epoch;
            for (slot, p) in best_values.iter_mut().zip(&params) {
                *slot = p.tensor.to_vec();
            }
            stale = 0;
        } else {
            stale += 1;
        }
        if cfg
            .target_val_accuracy
            .is_some_and(|target| val_acc >= target)
        {
            best_val_loss = val_loss;
            best_epoch = epoch;
            for (slot, p) in best_values.iter_mut().zip(&params) {
                *slot = p.tensor.to_vec();
            }
            break;
        }
        if stale >= cfg.patience {
            break;
        }
    }

    for (p, values) in params.iter().zip(&best_values) {
        p.tensor.set_values(values);
    }
    Ok(TrainOutcome {
        history,
        best_epoch,
        best_val_loss,
    })
}

/// `epoch,train_loss,val_loss,val_acc` rows.
pub fn write_history_csv(path: &Path, history: &[EpochStats]) -> Result<(), std::io::Error> {
    let mut out = String::from("epoch,train_loss,val_loss,val_acc\n");
    for e in history {
        out.push_str(&format!(
            "{},{},{},{}\n",
            e.epoch, e.train_loss, e.val_loss, e.val_acc
        ));
    }
    std::fs::write(path, out)
}
