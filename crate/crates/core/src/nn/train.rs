//! Shared mini-batch training loop.

use rand::seq::SliceRandom;

use super::optim::{AdamConfig, OptimizerState};
use super::params::{Gradients, Parameterized};
use super::rng::{streams, SeededRng};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    /// Global gradient-norm cap.
    pub clip_norm: f64,
    /// Dropout probability used while training.
    pub dropout: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            optimizer: AdamConfig::default(),
            clip_norm: 5.0,
            dropout: 0.05,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::parameter("epochs and batch size must be positive"));
        }
        let positive = self.optimizer.learning_rate > 0.0 && self.clip_norm > 0.0;
        if !positive {
            return Err(Error::parameter(
                "learning rate and clip norm must be positive",
            ));
        }
        super::dropout::check_probability(self.dropout)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingReport {
    /// Sample-weighted mean training loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

impl TrainingReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.epoch_losses.last().copied()
    }
}

/// Runs `cfg.epochs` passes of shuffled mini-batches. `batch_step` receives
/// the current model, the sample indices of the batch and the mask stream,
/// and returns the batch loss with its gradients.
pub(crate) fn run_training<M, F>(
    model: &mut M,
    n_samples: usize,
    cfg: &TrainConfig,
    mut batch_step: F,
) -> Result<TrainingReport>
where
    M: Parameterized,
    F: FnMut(&M, &[usize], &mut SeededRng) -> Result<(f64, Gradients)>,
{
    cfg.validate()?;
    if n_samples == 0 {
        return Err(Error::data("training set is empty"));
    }
    let mut optimizer = OptimizerState::new(cfg.optimizer, &model.parameters());
    let mut shuffle_rng = SeededRng::new(cfg.seed, streams::SHUFFLE);
    let mut mask_rng = SeededRng::new(cfg.seed, streams::TRAIN_MASKS);
    let mut order: Vec<usize> = (0..n_samples).collect();
    let mut report = TrainingReport::default();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let (loss, mut grads) =
                batch_step(model, batch, &mut mask_rng).map_err(|e| match e {
                    Error::Numeric(msg) => {
                        Error::Training(format!("epoch {epoch}, batch {b}: {msg}"))
                    }
                    other => other,
                })?;
            let norm = grads.clip_global_norm(cfg.clip_norm);
            if !loss.is_finite() || !norm.is_finite() {
                return Err(Error::Training(format!(
                    "diverged at epoch {epoch}, batch {b}: loss {loss}, gradient norm {norm}"
                )));
            }
            optimizer.step(&mut model.parameters_mut(), &grads)?;
            total += loss * batch.len() as f64;
        }
        let epoch_loss = total / n_samples as f64;
        log::debug!("epoch {epoch}: loss {epoch_loss:.6e}");
        report.epoch_losses.push(epoch_loss);
    }
    Ok(report)
}
