use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{argmax, Gradients, Storage, TinyNet};
use crate::error::{Error, Result};
use crate::io::Image;
use crate::seed::derive_seed;

/// Block id shared by flatten and all dense layers.
pub const DENSE_BLOCK: u8 = 6;

/// Which blocks train during fine-tuning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Dense block only.
    A,
    /// Conv blocks 4 and 5.
    B,
    /// Conv blocks 1 to 3.
    C,
    /// Everything.
    D,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::A, Strategy::B, Strategy::C, Strategy::D];

    pub fn trains_block(self, block_id: u8) -> bool {
        match self {
            Strategy::A => block_id == DENSE_BLOCK,
            Strategy::B => matches!(block_id, 4 | 5),
            Strategy::C => matches!(block_id, 1..=3),
            Strategy::D => true,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::A => "a",
            Strategy::B => "b",
            Strategy::C => "c",
            Strategy::D => "d",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "a" => Ok(Strategy::A),
            "b" => Ok(Strategy::B),
            "c" => Ok(Strategy::C),
            "d" => Ok(Strategy::D),
            other => Err(Error::InvalidConfig(format!(
                "unknown strategy `{other}` (expected a, b, c or d)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_strategy")]
    pub strategy: Strategy,
}

fn default_lr() -> f64 {
    0.05
}
fn default_batch() -> usize {
    16
}
fn default_epochs() -> usize {
    10
}
fn default_strategy() -> Strategy {
    Strategy::D
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: default_lr(),
            batch_size: default_batch(),
            epochs: default_epochs(),
            seed: 0,
            strategy: default_strategy(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        // lr = 0 is allowed: it is the no-op run used to check determinism.
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be nonnegative, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        Ok(())
    }
}

/// Training-set statistics for one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub accuracy: f64,
}

impl<S: Storage> TinyNet<S> {
    /// Overwrites every block's trainable flag from the strategy.
    pub fn set_strategy(&mut self, strategy: Strategy) {
        for (&block, flag) in self.trainable.iter_mut() {
            *flag = strategy.trains_block(block);
        }
    }

    /// `w <- w - lr * g` on trainable blocks; frozen parameters are untouched.
    pub fn sgd_step(&mut self, gradients: &Gradients, learning_rate: f64) -> Result<()> {
        if gradients.layers.len() != self.params.len()
            || gradients.layers.iter().zip(&self.params).any(|(g, p)| {
                g.weights.len() != p.weights.len() || g.bias.len() != p.bias.len()
            })
        {
            return Err(Error::shape("network parameters", "gradients"));
        }
        for ((layer, params), grad) in self.layers.iter().zip(&mut self.params).zip(&gradients.layers) {
            if !self.trainable.get(&layer.block_id).copied().unwrap_or(false) {
                continue;
            }
            let update = |w: &mut S, g: f64| {
                if g != 0.0 && learning_rate != 0.0 {
                    *w = S::from_f64(w.to_f64() - learning_rate * g);
                }
            };
            params.weights.iter_mut().zip(&grad.weights).for_each(|(w, &g)| update(w, g));
            params.bias.iter_mut().zip(&grad.bias).for_each(|(w, &g)| update(w, g));
        }
        Ok(())
    }

    /// Mini-batch SGD on the mean batch loss with seeded per-epoch shuffling.
    /// Per-sample gradients may be computed in parallel but are reduced in
    /// sample order, so results do not depend on the thread count.
    pub fn train(
        &mut self,
        images: &[&Image],
        labels: &[usize],
        config: &TrainConfig,
    ) -> Result<Vec<EpochStats>> {
        config.validate()?;
        if images.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if images.len() != labels.len() {
            return Err(Error::shape(
                format!("{} images", images.len()),
                format!("{} labels", labels.len()),
            ));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= self.num_classes) {
            return Err(Error::LabelOutOfRange {
                label,
                num_classes: self.num_classes,
            });
        }
        self.set_strategy(config.strategy);
        let mut order: Vec<usize> = (0..images.len()).collect();
        let mut history = Vec::with_capacity(config.epochs);
        for epoch in 0..config.epochs {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 0x7261_696e, epoch as u64));
            order.sort_unstable();
            order.shuffle(&mut rng);
            let (mut loss_sum, mut correct) = (0.0, 0usize);
            for batch in order.chunks(config.batch_size) {
                let results = batch
                    .par_iter()
                    .map(|&i| self.backward(images[i], labels[i]))
                    .collect::<Result<Vec<_>>>()?;
                let mut total = Gradients::zeros_like(self);
                for (r, &i) in results.iter().zip(batch) {
                    loss_sum += r.loss;
                    if argmax(&r.probabilities).0 == labels[i] {
                        correct += 1;
                    }
                    total.add_assign(&r.gradients);
                }
                total.scale(1.0 / batch.len() as f64);
                self.sgd_step(&total, config.learning_rate)?;
            }
            history.push(EpochStats {
                epoch,
                mean_loss: loss_sum / images.len() as f64,
                accuracy: correct as f64 / images.len() as f64,
            });
        }
        Ok(history)
    }
}
