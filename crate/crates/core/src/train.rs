//! Optimisation loop over in-memory samples.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matching::LossReport;
use crate::model::{LossConfig, Model};
use crate::nn::Ctx;
use crate::optim::{AdamW, AdamWConfig};
use crate::scalar::Scalar;
use crate::scene::SceneSample;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Stop after this many optimizer steps even if epochs remain.
    pub max_steps: Option<usize>,
    /// Feed ground-truth boxes to the enhancer for the first
    /// `teacher_force_epochs` epochs.
    pub teacher_force_boxes: bool,
    pub teacher_force_epochs: usize,
    pub shuffle: bool,
    pub optimizer: AdamWConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 4,
            max_steps: None,
            teacher_force_boxes: true,
            teacher_force_epochs: 2,
            shuffle: true,
            optimizer: AdamWConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        self.optimizer.validate()
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub teacher_forced: bool,
    pub grad_norm: f64,
    #[serde(flatten)]
    pub loss: LossReport,
}

/// Sample order of one epoch. Depends only on `(seed, epoch)`.
pub fn epoch_order(n: usize, seed: u64, epoch: usize, shuffle: bool) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    if shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        idx.shuffle(&mut rng);
    }
    idx
}

fn step_rng(seed: u64, step: usize) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(step as u64 + 1);
    r
}

/// Training state that survives checkpointing.
pub struct Trainer<T: Scalar> {
    pub model: Model<T>,
    pub optimizer: AdamW<T>,
    pub config: TrainConfig,
    pub loss: LossConfig,
    pub seed: u64,
    pub step: usize,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model: Model<T>, config: TrainConfig, loss: LossConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let optimizer = AdamW::new(config.optimizer, &model.params)?;
        Ok(Trainer {
            model,
            optimizer,
            config,
            loss,
            seed,
            step: 0,
        })
    }

    /// One optimizer step on `batch`.
    pub fn train_step(&mut self, batch: &[&SceneSample], epoch: usize) -> Result<StepRecord> {
        let teacher_forced = self.config.teacher_force_boxes && epoch < self.config.teacher_force_epochs;
        let (report, grads, updates) = {
            let mut cx = Ctx::new(&self.model.params, true, step_rng(self.seed, self.step));
            let out = self.model.batch_loss(&mut cx, batch, teacher_forced, &self.loss)?;
            if !out.mean.total.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step: self.step,
                    breakdown: format!(
                        "match={} bce={} ce={} total={}",
                        out.mean.match_loss, out.mean.bce_loss, out.mean.ce_loss, out.mean.total
                    ),
                });
            }
            let grads = cx.g.backward(out.loss);
            let pg = cx.g.param_grads(&grads);
            (out.mean, pg, std::mem::take(&mut cx.buffer_updates))
        };
        let grad_norm = self.optimizer.step(&mut self.model.params, &grads);
        for (id, v) in updates {
            self.model.params.set(id, v);
        }
        let rec = StepRecord {
            step: self.step,
            epoch,
            teacher_forced,
            grad_norm,
            loss: report,
        };
        self.step += 1;
        Ok(rec)
    }

    /// Run the configured schedule, calling `log` after every step.
    pub fn fit(
        &mut self,
        data: &[SceneSample],
        mut log: impl FnMut(&StepRecord) -> Result<()>,
    ) -> Result<Vec<StepRecord>> {
        if data.is_empty() {
            return Err(Error::Validation("no training samples".into()));
        }
        let bs = self.config.batch_size;
        let steps_per_epoch = data.len().div_ceil(bs);
        let mut records = Vec::new();
        let start_epoch = self.step / steps_per_epoch;
        for epoch in start_epoch..self.config.epochs {
            let order = epoch_order(data.len(), self.seed, epoch, self.config.shuffle);
            let skip = if epoch == start_epoch { self.step % steps_per_epoch } else { 0 };
            for chunk in order.chunks(bs).skip(skip) {
                if self.config.max_steps.is_some_and(|m| self.step >= m) {
                    return Ok(records);
                }
                let batch: Vec<&SceneSample> = chunk.iter().map(|&i| &data[i]).collect();
                let rec = self.train_step(&batch, epoch)?;
                log(&rec)?;
                records.push(rec);
            }
        }
        Ok(records)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_permutation_and_seeded() {
        let a = epoch_order(10, 3, 1, true);
        let mut s = a.clone();
        s.sort_unstable();
        assert_eq!(s, (0..10).collect::<Vec<_>>());
        assert_eq!(a, epoch_order(10, 3, 1, true));
        assert_ne!(a, epoch_order(10, 3, 2, true));
        assert_eq!(epoch_order(4, 3, 1, false), vec![0, 1, 2, 3]);
    }
}
