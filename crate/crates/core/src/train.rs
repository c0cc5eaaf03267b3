//! Mini-batch training with AdaBelief and best-validation model selection.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::config::{ModelConfig, TrainConfig};
use crate::data::{batches, FeatureRecord, SplitDataset};
use crate::error::{Error, Result};
use crate::metrics::{compute_metrics, MetricsReport, DEFAULT_THRESHOLD};
use crate::model::{bce_loss, MvirModel};
use crate::nn::Dropout;
use crate::optim::AdaBeliefState;

/// Keeps the dropout stream apart from the shuffle stream of the same seed.
const DROPOUT_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    /// Summed loss over the epoch divided by the number of training records.
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val: Option<MetricsReport>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the best validation epoch (the last epoch when there is no validation split).
    pub model: MvirModel,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
}

impl TrainOutcome {
    pub fn log_text(&self) -> String {
        let mut out = String::new();
        for e in &self.log {
            let _ = write!(out, "epoch {:>3} train_loss {:.6}", e.epoch, e.train_loss);
            if let (Some(loss), Some(m)) = (e.val_loss, &e.val) {
                let _ = write!(out, " val_loss {loss:.6} val_acc {:.4}", m.accuracy);
            }
            out.push('\n');
        }
        let _ = writeln!(out, "best_epoch {}", self.best_epoch);
        out
    }
}

/// Mean loss and metrics of `model` on `records`.
pub fn evaluate(model: &MvirModel, records: &[FeatureRecord]) -> Result<(f64, MetricsReport)> {
    let preds = model.predict(records)?;
    let labels: Vec<f64> = records.iter().map(|r| r.label.as_f64()).collect();
    let loss = bce_loss(&preds, &labels)? / records.len().max(1) as f64;
    Ok((loss, compute_metrics(&preds, &labels, DEFAULT_THRESHOLD)?))
}

/// One pass over `records` in seeded batch order; returns the summed loss.
pub fn train_epoch(
    model: &mut MvirModel,
    optimizer: &mut AdaBeliefState,
    records: &[FeatureRecord],
    cfg: &TrainConfig,
    epoch: u64,
) -> Result<f64> {
    let order = batches(records.len(), cfg.batch_size, cfg.seed, epoch)?;
    let mut dropout = if model.config.dropout > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ DROPOUT_SEED_SALT);
        rng.set_stream(epoch);
        Dropout::train(model.config.dropout, rng)
    } else {
        Dropout::eval()
    };
    let mut total = 0.0;
    for batch in order {
        let recs: Vec<&FeatureRecord> = batch.iter().map(|&i| &records[i]).collect();
        let mut tape = Tape::new();
        let bind = model.store.bind(&mut tape);
        let loss = model.batch_loss(&mut tape, &bind, &recs, &mut dropout)?;
        total += tape.scalar(loss);
        let grads = tape.backward(loss)?;
        let flat: Vec<Vec<f64>> = bind
            .vars()
            .iter()
            .zip(model.store.tensors())
            .map(|(&v, t)| grads.get_or_zeros(v, t.numel()))
            .collect();
        drop(tape);
        let names = model.store.names().to_vec();
        optimizer.step(model.store.tensors_mut(), &flat, cfg.learning_rate, &names)?;
    }
    Ok(total)
}

/// Trains a fresh model initialized from `train.seed`.
pub fn train(
    dataset: &SplitDataset,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_with(
        dataset,
        MvirModel::new(model_cfg.clone(), cfg.seed)?,
        cfg,
        |_| {},
    )
}

/// Trains `model`, calling `on_epoch` after every epoch.
pub fn train_with(
    dataset: &SplitDataset,
    mut model: MvirModel,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    if dataset.train.is_empty() {
        return Err(Error::Usage("training split is empty".into()));
    }
    let mut optimizer = AdaBeliefState::new(cfg.optimizer, model.store.tensors());
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Vec<crate::autodiff::Tensor>)> = None;
    for e in 0..cfg.epochs {
        let sum = train_epoch(&mut model, &mut optimizer, &dataset.train, cfg, e as u64)?;
        let (val_loss, val) = if dataset.val.is_empty() {
            (None, None)
        } else {
            let (l, m) = evaluate(&model, &dataset.val)?;
            (Some(l), Some(m))
        };
        let entry = EpochLog {
            epoch: e + 1,
            train_loss: sum / dataset.train.len() as f64,
            val_loss,
            val,
        };
        on_epoch(&entry);
        if let Some(m) = &entry.val {
            if best.as_ref().is_none_or(|(acc, _, _)| m.accuracy > *acc) {
                best = Some((m.accuracy, e + 1, model.store.tensors().to_vec()));
            }
        }
        log.push(entry);
    }
    let best_epoch = match best {
        Some((_, epoch, tensors)) => {
            model.store.tensors_mut().clone_from_slice(&tensors);
            epoch
        }
        None => cfg.epochs,
    };
    Ok(TrainOutcome {
        model,
        log,
        best_epoch,
    })
}
