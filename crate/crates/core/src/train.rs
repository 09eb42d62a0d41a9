//! Pieces shared by the pretext and downstream trainers.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use candle_core::Tensor;
use candle_nn::{AdamW, Optimizer as _, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{stack, SamplePair};
use crate::error::{Error, Result};
use crate::experiment::checkpoint::write_atomic;
use crate::metrics::MetricSeries;
use crate::model_zoo::Network;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    #[default]
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainHyper {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lambda_l1: f64,
    pub optimizer: Optimizer,
    pub adam_betas: [f64; 2],
    pub seed: u64,
    pub checkpoint_interval_epochs: usize,
    /// Use only the first `n` training images (pretraining-subset protocol).
    pub subset_size: Option<usize>,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self::pretrain()
    }
}

impl TrainHyper {
    pub fn pretrain() -> Self {
        Self {
            epochs: 60,
            batch_size: 128,
            learning_rate: 2e-4,
            lambda_l1: 100.0,
            optimizer: Optimizer::Adam,
            adam_betas: [0.5, 0.999],
            seed: 0,
            checkpoint_interval_epochs: 5,
            subset_size: None,
        }
    }

    pub fn finetune() -> Self {
        Self {
            batch_size: 64,
            ..Self::pretrain()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: &str| Err(Error::config(format!("hyper.{key}"), msg));
        if self.epochs == 0 {
            return bad("epochs", "must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate", "must be positive and finite");
        }
        if !(self.lambda_l1 >= 0.0 && self.lambda_l1.is_finite()) {
            return bad("lambda_l1", "must be non-negative");
        }
        if self.adam_betas.iter().any(|b| !(0.0..1.0).contains(b)) {
            return bad("adam_betas", "each beta must lie in [0, 1)");
        }
        if self.checkpoint_interval_epochs == 0 || self.checkpoint_interval_epochs > self.epochs {
            return bad(
                "checkpoint_interval_epochs",
                "must be positive and at most the number of epochs",
            );
        }
        if self.subset_size == Some(0) {
            return bad("subset_size", "must be positive when given");
        }
        Ok(())
    }

    /// Number of checkpoints a run of this length writes.
    pub fn checkpoint_count(&self) -> usize {
        self.epochs / self.checkpoint_interval_epochs
    }
}

/// Derives an independent stream seed from a base seed and a tag.
pub fn mix_seed(seed: u64, parts: &[u64]) -> u64 {
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    for &p in parts {
        h ^= p.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(h << 6).wrapping_add(h >> 2);
        h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h ^= h >> 31;
    }
    h
}

/// Seeded shuffle of `0..n` cut into batches; the last batch may be short.
pub fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(seed, &[0xba7c, epoch as u64])));
    idx.chunks(batch_size.max(1)).map(|c| c.to_vec()).collect()
}

/// Stacks inputs and targets of `pairs` into two `(N, C, H, W)` tensors.
pub fn batch_tensors(pairs: &[SamplePair]) -> Result<(Tensor, Tensor)> {
    let inputs: Vec<_> = pairs.iter().map(|p| &p.input).collect();
    let targets: Vec<_> = pairs.iter().map(|p| &p.target).collect();
    Ok((stack(&inputs)?, stack(&targets)?))
}

/// Adam over all parameters of `net`.
pub fn adam(net: &Network, hyper: &TrainHyper) -> Result<AdamW> {
    let params = ParamsAdamW {
        lr: hyper.learning_rate,
        beta1: hyper.adam_betas[0],
        beta2: hyper.adam_betas[1],
        eps: 1e-8,
        weight_decay: 0.0,
    };
    Ok(AdamW::new(net.vars(), params)?)
}

/// One optimizer step on `loss`; a non-finite loss aborts with `what`.
pub fn step(opt: &mut AdamW, loss: &Tensor, what: &str) -> Result<f32> {
    let v = scalar(loss)?;
    if !v.is_finite() {
        return Err(Error::Diverged(format!("non-finite loss {v} at {what}")));
    }
    opt.backward_step(loss)?;
    Ok(v)
}

pub fn scalar(t: &Tensor) -> Result<f32> {
    Ok(t.to_dtype(candle_core::DType::F32)?.to_scalar::<f32>()?)
}

/// Which direction of a metric is better.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Goal {
    Minimize,
    Maximize,
}

impl Goal {
    pub fn better(self, a: f64, b: f64) -> bool {
        match self {
            Goal::Minimize => a < b,
            Goal::Maximize => a > b,
        }
    }
}

/// The best parameters seen inside one checkpoint window.
#[derive(Debug)]
pub struct WindowBest {
    pub epoch: usize,
    pub metric: f64,
    pub params: BTreeMap<String, Tensor>,
}

/// Tracks the best epoch of each `interval`-epoch window and hands it out
/// when the window closes.
#[derive(Debug)]
pub struct WindowTracker {
    interval: usize,
    goal: Goal,
    current: Option<WindowBest>,
}

impl WindowTracker {
    pub fn new(interval: usize, goal: Goal) -> Self {
        Self {
            interval,
            goal,
            current: None,
        }
    }

    /// Records epoch `epoch` (1-based). Returns the window's best when
    /// `epoch` closes a window.
    pub fn observe(&mut self, epoch: usize, metric: f64, net: &Network) -> Result<Option<WindowBest>> {
        let replace = match &self.current {
            None => true,
            Some(b) => self.goal.better(metric, b.metric) || (b.metric.is_nan() && !metric.is_nan()),
        };
        if replace {
            self.current = Some(WindowBest {
                epoch,
                metric,
                params: net.snapshot()?,
            });
        }
        if epoch % self.interval == 0 {
            Ok(self.current.take())
        } else {
            Ok(None)
        }
    }
}

/// Writes `series` as `<dir>/<stem>_<column>.csv`.
pub fn write_series_csv(dir: &Path, stem: &str, series: &MetricSeries, column: &str) -> Result<PathBuf> {
    let p = dir.join(format!("{stem}_{column}.csv"));
    write_atomic(&p, series.to_csv(column).as_bytes())?;
    Ok(p)
}
