//! Self-supervised pretraining and fine-tuning for electron microscopy images.
//!
//! A conditional GAN (least-squares adversarial loss plus an L1 reconstruction
//! term) is trained to restore corrupted, unlabeled images. The resulting
//! generator weights are transferred onto downstream tasks: nanoparticle
//! segmentation, denoising, noise and background removal, and
//! super-resolution.
//!
//! Module map:
//!
//! * [`model_zoo`]: generator / discriminator architectures, receptive fields,
//!   head replacement and weight transfer.
//! * [`data`]: image grids, datasets, patching, augmentation, pretext
//!   corruption and a synthetic EM-like corpus.
//! * [`gan`]: the adversarial pretext trainer.
//! * [`finetune`]: supervised downstream trainers.
//! * [`metrics`]: Dice, checkpoint evaluation, tables and plots.
//! * [`experiment`]: configuration, checkpoints and run orchestration.

pub mod data;
pub mod error;
pub mod experiment;
pub mod finetune;
pub mod gan;
pub mod metrics;
pub mod model_zoo;
pub mod train;

pub use data::{
    AugmentPolicy, CorruptionPolicy, Dataset, ImageGrid, SamplePair, SplitSpec, SynthParams, Task,
};
pub use error::{Error, Result};
pub use experiment::checkpoint::CheckpointRecord;
pub use experiment::config::{ExperimentConfig, RunKind, TrainHyper};
pub use metrics::{MetricKind, MetricSeries, MetricTable};
pub use model_zoo::{Family, HeadTask, LayerKind, LayerSpec, ModelSpec, Network};

/// Device used for all tensors. Training runs on the CPU backend.
pub fn device() -> candle_core::Device {
    candle_core::Device::Cpu
}
