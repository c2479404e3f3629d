use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{cross_entropy_with_grad, Classifier};
use crate::data::LabeledDataset;
use crate::error::{PteError, Result};

/// Mini-batch SGD settings for supervised training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Coefficient of the `||w||^2` penalty.
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            learning_rate: 0.05,
            batch_size: 32,
            weight_decay: 1e-4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(PteError::Config(
                "train config: epochs and batch_size must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(PteError::Config(format!(
                "train config: learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(PteError::Config(format!(
                "train config: weight decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("train config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Classifier,
    /// Mean regularized training loss per epoch, measured before each batch update.
    pub epoch_losses: Vec<f64>,
}

/// Minimizes mean cross-entropy plus `weight_decay * ||w||^2` with mini-batch
/// SGD. The seed fixes the batch order.
pub fn train_supervised(
    model: Classifier,
    data: &LabeledDataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut model = model;
    if model.is_frozen() {
        return Err(PteError::Contract(
            "cannot train a frozen classifier".into(),
        ));
    }
    if data.is_empty() {
        return Err(PteError::Data("training set is empty".into()));
    }
    model.check_dataset(data)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = model.zero_grads();
            let mut loss = 0.0;
            for &i in batch {
                let y = data.label(i);
                loss +=
                    model.accumulate(data.input(i), &mut grads, |z| cross_entropy_with_grad(z, y));
            }
            let n = batch.len() as f64;
            grads.scale(1.0 / n);
            model.add_weight_decay(&mut grads, cfg.weight_decay);
            let batch_loss = loss / n + cfg.weight_decay * model.squared_norm();
            if !batch_loss.is_finite() || !grads.is_finite() {
                return Err(PteError::numerical(
                    format!("training epoch {epoch}"),
                    "non-finite loss or gradient",
                ));
            }
            total += batch_loss * n;
            model.apply_gradients(&grads, cfg.learning_rate)?;
        }
        epoch_losses.push(total / data.len() as f64);
    }
    model.set_train_config_hash(cfg.hash());
    Ok(TrainOutcome {
        model,
        epoch_losses,
    })
}
