//! Adam training over mini-batches of instances.
//!
//! All randomness is derived from the run seed: the epoch shuffle from
//! `(seed, epoch)` and each step's routing logits and negatives from
//! `(seed, step)`. Resuming from a checkpoint therefore replays exactly.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{instance_loss, InstanceDraws, ModelConfig, ModelParams, ModelShape};
use crate::data::{ItemCatalog, TrainingInstance};
use crate::error::{MindError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Learning rate at the end of the last epoch relative to the start;
    /// the rate decays linearly in between. 1 keeps it constant.
    pub final_lr_fraction: f64,
    /// Taken from the run seed, never from the config file.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 128,
            epochs: 10,
            final_lr_fraction: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Learning rate for batch `batch` of `batches` in epoch `epoch`.
    pub fn learning_rate_at(&self, epoch: usize, batch: usize, batches: usize) -> f64 {
        if self.final_lr_fraction == 1.0 || self.epochs == 0 {
            return self.learning_rate;
        }
        let progress = (epoch as f64 + batch as f64 / batches.max(1) as f64) / self.epochs as f64;
        self.learning_rate * (1.0 - (1.0 - self.final_lr_fraction) * progress.min(1.0))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(MindError::config("learning rate must be finite and non-negative"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(MindError::config("Adam betas must lie in [0, 1)"));
        }
        if !(self.epsilon > 0.0) {
            return Err(MindError::config("Adam epsilon must be positive"));
        }
        if !(0.0..=1.0).contains(&self.final_lr_fraction) {
            return Err(MindError::config("final learning rate fraction must lie in [0, 1]"));
        }
        if self.batch_size == 0 {
            return Err(MindError::config("batch size must be at least 1"));
        }
        Ok(())
    }
}

const SHUFFLE_DOMAIN: u64 = 1 << 62;
const INIT_DOMAIN: u64 = 1 << 61;

/// Freshly initialised parameters for a training run seeded with `seed`.
pub fn init_params(cfg: &ModelConfig, shape: &ModelShape, seed: u64) -> ModelParams {
    ModelParams::init(cfg, shape, &mut stream_rng(seed, INIT_DOMAIN, 0))
}

/// Generator for stream `index` of `domain` under `seed`.
pub fn stream_rng(seed: u64, domain: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(domain | index);
    rng
}

/// Adam moments, one buffer per parameter group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let sizes: Vec<usize> = params.groups_ref().iter().map(|(_, v)| v.len()).collect();
        Self {
            step: 0,
            first: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn matches(&self, params: &ModelParams) -> bool {
        let groups = params.groups_ref();
        groups.len() == self.first.len()
            && groups.len() == self.second.len()
            && groups
                .iter()
                .zip(self.first.iter().zip(&self.second))
                .all(|((_, v), (m, s))| v.len() == m.len() && v.len() == s.len())
    }

    /// One bias-corrected Adam update. Padding rows are skipped.
    pub fn apply(&mut self, params: &mut ModelParams, grads: &ModelParams, cfg: &TrainConfig) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        let grad_groups = grads.groups_ref();
        for (k, group) in params.groups_mut().into_iter().enumerate() {
            let g = grad_groups[k].1;
            let (m, v) = (&mut self.first[k], &mut self.second[k]);
            for i in group.frozen..group.values.len() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                group.values[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
            }
        }
    }
}

/// Mean loss and gradient over a batch with the given draws.
pub fn batch_gradient(
    params: &ModelParams,
    model_cfg: &ModelConfig,
    catalog: &ItemCatalog,
    batch: &[&TrainingInstance],
    draws: &[InstanceDraws],
) -> Result<(f64, ModelParams)> {
    if batch.is_empty() {
        return Err(MindError::data("empty training batch"));
    }
    let mut grads = params.zeros_like();
    let weight = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    let mut bad = Vec::new();
    for (inst, d) in batch.iter().zip(draws) {
        let loss = instance_loss(params, model_cfg, catalog, inst, d, Some((&mut grads, weight)))?;
        if !loss.is_finite() {
            bad.push(format!("{}->{}", inst.user_id, inst.target));
        }
        total += loss;
    }
    if !bad.is_empty() {
        return Err(MindError::Numeric(format!(
            "non-finite loss for instances {}",
            bad.join(", ")
        )));
    }
    Ok((total * weight, grads))
}

/// One Adam step on the mean batch loss. Returns the batch loss.
pub fn train_step(
    params: &mut ModelParams,
    adam: &mut AdamState,
    catalog: &ItemCatalog,
    batch: &[&TrainingInstance],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let num_items = params.item_tables.items.vocab_size();
    let draws = batch
        .iter()
        .map(|inst| InstanceDraws::sample(inst, model_cfg, num_items, rng))
        .collect::<Result<Vec<_>>>()?;
    let (loss, grads) = batch_gradient(params, model_cfg, catalog, batch, &draws)?;
    adam.apply(params, &grads, train_cfg);
    Ok(loss)
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLog {
    pub step: u64,
    pub epoch: usize,
    pub loss: f64,
    pub learning_rate: f64,
    pub wall_seconds: f64,
}

impl StepLog {
    pub const HEADER: &'static str = "step\tepoch\tloss\tlearning_rate\twall_seconds";

    pub fn to_line(&self) -> String {
        format!(
            "{}\t{}\t{:.9}\t{}\t{:.3}",
            self.step, self.epoch, self.loss, self.learning_rate, self.wall_seconds
        )
    }
}

/// Runs epoch `epoch` (0-based) over `train` and returns its mean batch loss.
#[allow(clippy::too_many_arguments)]
pub fn run_epoch(
    params: &mut ModelParams,
    adam: &mut AdamState,
    catalog: &ItemCatalog,
    train: &[TrainingInstance],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    epoch: usize,
    mut on_step: impl FnMut(&StepLog),
) -> Result<f64> {
    if train.is_empty() {
        return Err(MindError::data("no training instances"));
    }
    let started = Instant::now();
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut stream_rng(train_cfg.seed, SHUFFLE_DOMAIN, epoch as u64));
    let mut sum = 0.0;
    let total = train.len().div_ceil(train_cfg.batch_size);
    for (b, chunk) in order.chunks(train_cfg.batch_size).enumerate() {
        let batch: Vec<&TrainingInstance> = chunk.iter().map(|&i| &train[i]).collect();
        let mut rng = stream_rng(train_cfg.seed, 0, adam.step);
        let step_cfg = TrainConfig {
            learning_rate: train_cfg.learning_rate_at(epoch, b, total),
            ..*train_cfg
        };
        let loss = train_step(params, adam, catalog, &batch, model_cfg, &step_cfg, &mut rng)?;
        sum += loss;
        on_step(&StepLog {
            step: adam.step,
            epoch,
            loss,
            learning_rate: step_cfg.learning_rate,
            wall_seconds: started.elapsed().as_secs_f64(),
        });
    }
    Ok(sum / total as f64)
}

/// Trains for `train_cfg.epochs` epochs from scratch state. Returns per-epoch
/// mean losses.
pub fn fit(
    params: &mut ModelParams,
    catalog: &ItemCatalog,
    train: &[TrainingInstance],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    model_cfg.validate()?;
    train_cfg.validate()?;
    let mut adam = AdamState::new(params);
    (0..train_cfg.epochs)
        .map(|e| run_epoch(params, &mut adam, catalog, train, model_cfg, train_cfg, e, |_| {}))
        .collect()
}
