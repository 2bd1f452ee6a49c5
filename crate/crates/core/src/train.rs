//! Mini-batch training with early stopping on mean validation F1.

use std::sync::Arc;

use blockcast_nn::{Mode, Optimizer, Tensor, TrainConfig, TrainState};
use rand::seq::SliceRandom;

use crate::data::{positive_class_weight, seeded_rng};
use crate::error::{shape_err, Error, Result};
use crate::metrics::{Confusion, THRESHOLD};
use crate::models::ModalityModel;

/// Prepared model inputs for a set of windows. Each window is a list of shared chunks
/// (one per frame, or a single chunk) whose concatenation has `window_shape`.
#[derive(Clone, Debug, Default)]
pub struct ModalityDataset {
    window_shape: Vec<usize>,
    inputs: Vec<Vec<Arc<[f32]>>>,
    labels: Vec<Vec<u8>>,
}

impl ModalityDataset {
    pub fn new(window_shape: Vec<usize>) -> Self {
        ModalityDataset {
            window_shape,
            ..Default::default()
        }
    }

    pub fn push(&mut self, chunks: Vec<Arc<[f32]>>, labels: Vec<u8>) -> Result<()> {
        let expected: usize = self.window_shape.iter().product();
        let got: usize = chunks.iter().map(|c| c.len()).sum();
        if got != expected {
            return Err(shape_err("window input", &self.window_shape, got));
        }
        if let Some(first) = self.labels.first() {
            if first.len() != labels.len() {
                return Err(shape_err("window labels", first.len(), labels.len()));
            }
        }
        self.inputs.push(chunks);
        self.labels.push(labels);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn labels(&self) -> &[Vec<u8>] {
        &self.labels
    }

    pub fn window_shape(&self) -> &[usize] {
        &self.window_shape
    }

    /// `(len(indices), ..window_shape)` input tensor.
    pub fn batch(&self, indices: &[usize]) -> Result<Tensor> {
        let per: usize = self.window_shape.iter().product();
        let mut data = Vec::with_capacity(per * indices.len());
        for &i in indices {
            for chunk in &self.inputs[i] {
                data.extend(chunk.iter().map(|&v| v as f64));
            }
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(&self.window_shape);
        Ok(Tensor::new(shape, data)?)
    }

    /// Flattened `(len(indices), k)` labels as reals.
    fn batch_labels(&self, indices: &[usize]) -> Vec<f64> {
        indices.iter().flat_map(|&i| self.labels[i].iter().map(|&l| l as f64)).collect()
    }

    /// `(negatives, positives)` over every window and horizon.
    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.labels.iter().flatten().filter(|&&l| l != 0).count();
        (self.labels.len() * self.labels.first().map_or(0, Vec::len) - pos, pos)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub pos_weight: f64,
    /// Mean training loss per epoch.
    pub train_loss: Vec<f64>,
    /// Mean validation F1 over horizons per epoch.
    pub val_mean_f1: Vec<f64>,
    pub best_epoch: usize,
    /// Per-horizon validation F1 of the kept parameters.
    pub validation_f1: Vec<f64>,
}

/// Eval-mode probabilities for every window of `data`, in batches.
pub fn predict_dataset(model: &ModalityModel, data: &ModalityDataset, batch_size: usize) -> Result<Vec<Vec<f64>>> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut out = Vec::with_capacity(data.len());
    for chunk in idx.chunks(batch_size.max(1)) {
        out.extend(model.predict_prepared(&data.batch(chunk)?)?);
    }
    Ok(out)
}

fn per_horizon_f1(labels: &[Vec<u8>], probs: &[Vec<f64>]) -> Result<Vec<f64>> {
    let k = labels[0].len();
    (0..k)
        .map(|h| {
            let y: Vec<u8> = labels.iter().map(|l| l[h]).collect();
            let s: Vec<f64> = probs.iter().map(|p| p[h]).collect();
            Ok(Confusion::from_scores(&y, &s, THRESHOLD)?.f1())
        })
        .collect()
}

/// Trains in place and keeps the parameters of the epoch with the best mean validation
/// F1. `config.pos_weight` is replaced by `alpha * N0 / N1` from the training labels.
pub fn train_model(
    model: &mut ModalityModel,
    train: &ModalityDataset,
    val: &ModalityDataset,
    config: &TrainConfig,
    alpha: f64,
) -> Result<TrainReport> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::Data(format!(
            "training needs non-empty splits, got {} train and {} validation windows",
            train.len(),
            val.len()
        )));
    }
    let prepared = model.spec().prepared_shape();
    for d in [train, val] {
        if d.window_shape() != prepared {
            return Err(shape_err("dataset windows", &prepared, d.window_shape()));
        }
        if d.labels[0].len() != model.spec().horizons {
            return Err(shape_err("dataset horizons", model.spec().horizons, d.labels[0].len()));
        }
    }
    let (n_neg, n_pos) = train.class_counts();
    let pos_weight = positive_class_weight(n_neg, n_pos, alpha)?;
    if n_neg == 0 {
        log::warn!("{} training labels are all positive", model.modality());
    }
    let config = TrainConfig {
        pos_weight,
        ..config.clone()
    };
    config.validate()?;

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut rng = seeded_rng(config.rng_seed, 0x747261696e);
    let mut state = TrainState::new(config.rng_seed);
    let mut opt = Optimizer::new(&config);
    let mut best: Option<(f64, usize, Vec<Tensor>, Vec<f64>)> = None;
    let mut since_best = 0;
    let mut train_loss = Vec::new();
    let mut val_mean_f1 = Vec::new();

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let x = train.batch(batch)?;
            let y = train.batch_labels(batch);
            model.store_mut().zero_grad();
            let (logits, cache) = model.forward_prepared(&x, &mut Mode::Train(&mut state))?;
            let (loss, grad) = blockcast_nn::loss::horizon_loss_from_logits(&logits, &y, pos_weight)?;
            model.backward(&cache, &grad)?;
            state.apply_stat_updates(model.store_mut());
            opt.step(model.store_mut())?;
            total += loss * batch.len() as f64;
        }
        let epoch_loss = total / train.len() as f64;
        train_loss.push(epoch_loss);

        let probs = predict_dataset(model, val, config.batch_size)?;
        let f1 = per_horizon_f1(&val.labels, &probs)?;
        let mean = f1.iter().sum::<f64>() / f1.len() as f64;
        val_mean_f1.push(mean);
        log::info!(
            "{} epoch {}: loss {epoch_loss:.4}, val mean F1 {mean:.4}",
            model.modality(),
            epoch + 1
        );
        if best.as_ref().is_none_or(|b| mean > b.0) {
            best = Some((mean, epoch, model.store().snapshot(), f1));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }
    let (_, best_epoch, params, validation_f1) = best.expect("at least one epoch");
    model.store_mut().restore(&params)?;
    model.validation_f1 = validation_f1.clone();
    model.train_seed = config.rng_seed;
    Ok(TrainReport {
        pos_weight,
        train_loss,
        val_mean_f1,
        best_epoch,
        validation_f1,
    })
}
