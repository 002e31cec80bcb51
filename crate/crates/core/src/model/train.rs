//! Mini-batch Adam training with softmax cross-entropy.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use super::{ModelError, PatchTransformer};
use crate::image::Image;
use crate::mask::MaskSpec;
use crate::model::ops::argmax;
use crate::rng::{child_seed, keyed, streams};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(rename_all = "camelCase", deny_unknown_fields)
)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Decoupled weight decay (AdamW); zero disables it.
    pub weight_decay: f64,
    pub seed: u64,
    /// Stop after an epoch whose training accuracy reaches this value.
    pub target_accuracy: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
            seed: 0,
            target_accuracy: None,
        }
    }
}

/// A normalized input and its class index.
#[derive(Debug, Clone)]
pub struct Example {
    pub input: Image,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(rename_all = "camelCase")
)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(rename_all = "camelCase")
)]
pub struct TrainLog {
    pub epochs: Vec<EpochStats>,
}

pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64], cfg: &TrainConfig) {
        self.step += 1;
        let bc1 = 1.0 - libm::pow(cfg.beta1, self.step as f64);
        let bc2 = 1.0 - libm::pow(cfg.beta2, self.step as f64);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= cfg.learning_rate * (m_hat / (libm::sqrt(v_hat) + cfg.epsilon) + cfg.weight_decay * params[i]);
        }
    }
}

/// Trains `model` in place; batches are reshuffled each epoch from the seed.
pub fn train(model: &mut PatchTransformer, data: &[Example], cfg: &TrainConfig) -> Result<TrainLog, ModelError> {
    if data.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let mut adam = Adam::new(model.param_count());
    let mut grad = vec![0.0; model.param_count()];
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = TrainLog::default();
    let unmasked = MaskSpec::none();
    let batch_size = cfg.batch_size.max(1);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut keyed(child_seed(cfg.seed, epoch as u64), streams::BATCH_ORDER));
        let (mut total_loss, mut correct) = (0.0, 0usize);
        for (step, batch) in order.chunks(batch_size).enumerate() {
            grad.fill(0.0);
            for &i in batch {
                let ex = &data[i];
                let (loss, logits) = model.accumulate_gradient(&ex.input, ex.label, &unmasked, &mut grad)?;
                if !loss.is_finite() {
                    return Err(ModelError::Diverged { epoch, step });
                }
                total_loss += loss;
                correct += usize::from(argmax(&logits) == ex.label);
            }
            let inv = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= inv);
            adam.update(model.params_mut(), &grad, cfg);
            if model.params().iter().any(|p| !p.is_finite()) {
                return Err(ModelError::Diverged { epoch, step });
            }
        }
        let stats = EpochStats {
            epoch,
            mean_loss: total_loss / data.len() as f64,
            accuracy: correct as f64 / data.len() as f64,
        };
        let done = cfg.target_accuracy.is_some_and(|a| stats.accuracy >= a);
        log.epochs.push(stats);
        if done {
            break;
        }
    }
    Ok(log)
}

/// Fraction of examples whose argmax prediction equals the label.
pub fn accuracy(model: &PatchTransformer, data: &[Example], mask: &MaskSpec) -> Result<f64, ModelError> {
    let mut correct = 0;
    for ex in data {
        correct += usize::from(argmax(&model.forward(&ex.input, mask)?.logits) == ex.label);
    }
    Ok(correct as f64 / data.len().max(1) as f64)
}
