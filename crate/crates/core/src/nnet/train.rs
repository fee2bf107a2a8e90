//! Generic deterministic training loop plus the pretraining stage.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{grad, CeTarget, HeadId, LossItem, ModelParams, OptAlgo, Optimizer};
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use crate::world::Document;

/// Hyperparameters shared by every training stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub optimizer: OptAlgo,
    pub weight_decay: f64,
    /// Multiplier on the embedding learning rate; pretraining uses 1.0,
    /// finetuning stages default to 0.1 to mirror the pretrain→finetune
    /// asymmetry without freezing the table.
    pub embedding_lr_scale: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config {
                field: "learning_rate",
                reason: format!("must be positive, got {}", self.learning_rate),
            });
        }
        if self.steps == 0 {
            return Err(Error::Config { field: "steps", reason: "must be ≥ 1".into() });
        }
        if self.batch_size == 0 {
            return Err(Error::Config { field: "batch_size", reason: "must be ≥ 1".into() });
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config {
                field: "weight_decay",
                reason: "must be nonnegative".into(),
            });
        }
        if !(self.embedding_lr_scale > 0.0) {
            return Err(Error::Config {
                field: "embedding_lr_scale",
                reason: "must be positive".into(),
            });
        }
        Ok(())
    }
}

/// Per-step mean training loss.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub losses: Vec<f64>,
}

impl TrainLog {
    pub fn final_loss(&self) -> f64 {
        self.losses.last().copied().unwrap_or(f64::NAN)
    }
}

/// Cycles over `0..n` in epoch-shuffled order.
pub struct EpochSampler {
    order: Vec<usize>,
    pos: usize,
}

impl EpochSampler {
    pub fn new(n: usize) -> EpochSampler {
        EpochSampler { order: (0..n).collect(), pos: n }
    }

    pub fn next_index(&mut self, rng: &mut ChaCha8Rng) -> usize {
        if self.pos >= self.order.len() {
            self.order.shuffle(rng);
            self.pos = 0;
        }
        let i = self.order[self.pos];
        self.pos += 1;
        i
    }

    pub fn next_batch(&mut self, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        (0..batch_size).map(|_| self.next_index(rng)).collect()
    }
}

/// Run `steps` descent updates, pulling each batch from `next_batch`.
/// Deterministic given (params, config, provider). Fails with the step
/// index on divergence.
pub fn train<F>(params: &mut ModelParams, config: &TrainConfig, mut next_batch: F) -> Result<TrainLog>
where
    F: FnMut(usize, &mut ChaCha8Rng) -> Vec<LossItem>,
{
    config.validate()?;
    let mut rng = rng_from_seed(config.seed);
    let mut opt = Optimizer::new(
        config.optimizer,
        config.learning_rate,
        config.weight_decay,
        config.embedding_lr_scale,
    );
    let mut log = TrainLog { losses: Vec::with_capacity(config.steps) };
    for step in 0..config.steps {
        let batch = next_batch(step, &mut rng);
        if batch.is_empty() {
            return Err(Error::Training { step, reason: "provider returned an empty batch".into() });
        }
        let (loss, grads) = grad(params, &batch)?;
        let mean_loss = loss / batch.len() as f64;
        if !mean_loss.is_finite() {
            return Err(Error::Training { step, reason: format!("non-finite loss {mean_loss}") });
        }
        opt.step(params, &grads).map_err(|e| match e {
            Error::Training { reason, .. } => Error::Training { step, reason },
            other => other,
        })?;
        log.losses.push(mean_loss);
    }
    Ok(log)
}

/// Pretrain on the corpus: cross-entropy of predicting each document's
/// stated value from (concept embedding, slot head). Embeddings of
/// concepts that never occur in the corpus are untouched by construction.
pub fn pretrain(
    params: &mut ModelParams,
    docs: &[Document],
    config: &TrainConfig,
) -> Result<TrainLog> {
    if docs.is_empty() {
        return Err(Error::Empty("pretraining corpus is empty".into()));
    }
    let mut sampler = EpochSampler::new(docs.len());
    train(params, config, |_, rng| {
        sampler
            .next_batch(config.batch_size, rng)
            .into_iter()
            .map(|i| {
                let d = &docs[i];
                LossItem::Ce {
                    concept: d.concept_id as usize,
                    head: HeadId::SlotValue(d.slot),
                    target: CeTarget::Hard(d.stated_value as usize),
                    weight: 1.0,
                }
            })
            .collect()
    })
}
