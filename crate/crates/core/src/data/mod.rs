//! Images, datasets and the preprocessing applied before training.

pub mod augment;
pub mod corrupt;
pub mod dataset;
pub mod image;
pub mod patches;
pub mod split;
pub mod synth;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use self::augment::{augment, AugmentPolicy};
pub use self::corrupt::{corrupt, pretext_pair, CorruptionPolicy};
pub use self::dataset::{ingest_dataset, Dataset, LayoutManifest, TargetKind, TaskLayout};
pub use self::image::{standardize, stack, ImageGrid};
pub use self::patches::{extract_patches, Patch};
pub use self::split::{split, Amount, SplitSpec};
pub use self::synth::{synth_corpus, SynthCorpus, SynthParams, SynthSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Pretext,
    Segmentation,
    Denoise,
    NoiseBgRemoval,
    Superres,
}

impl Task {
    pub const ALL: [Task; 5] = [
        Task::Pretext,
        Task::Segmentation,
        Task::Denoise,
        Task::NoiseBgRemoval,
        Task::Superres,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Task::Pretext => "pretext",
            Task::Segmentation => "segmentation",
            Task::Denoise => "denoise",
            Task::NoiseBgRemoval => "noise_bg_removal",
            Task::Superres => "superres",
        }
    }

    pub fn has_mask_target(&self) -> bool {
        *self == Task::Segmentation
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .iter()
            .find(|t| t.name() == s)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("unknown task `{s}`")))
    }
}

/// One training example. For segmentation the target is a binary mask.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePair {
    pub input: ImageGrid,
    pub target: ImageGrid,
    pub task: Task,
}

impl SamplePair {
    pub fn new(input: ImageGrid, target: ImageGrid, task: Task) -> Result<Self> {
        if (input.height(), input.width()) != (target.height(), target.width()) {
            return Err(Error::Shape(format!(
                "input {}x{} and target {}x{} differ",
                input.height(),
                input.width(),
                target.height(),
                target.width()
            )));
        }
        if task.has_mask_target() && !target.is_binary() {
            return Err(Error::InvalidArgument(
                "segmentation target must be a binary mask".into(),
            ));
        }
        Ok(Self {
            input,
            target,
            task,
        })
    }
}
