//! Strict TOML run configuration. Unknown keys are rejected; omitted keys
//! take run-kind dependent defaults, and the filled-in result can be dumped
//! back as the effective configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{AugmentPolicy, CorruptionPolicy, SplitSpec, SynthParams, Task};
use crate::error::{Error, Result};
use crate::finetune::InitMode;
use crate::metrics::TableFormat;
use crate::model_zoo::{ModelSpec, DISC_PRESET};

pub use crate::train::TrainHyper;

/// Training crop for segmentation fine-tuning.
pub const SEGMENTATION_CROP: usize = 448;
/// Training crop for the restoration tasks.
pub const RESTORATION_CROP: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunKind {
    Pretrain,
    Finetune,
    Evaluate,
    SynthData,
    RfReport,
}

impl RunKind {
    pub fn name(&self) -> &'static str {
        match self {
            RunKind::Pretrain => "pretrain",
            RunKind::Finetune => "finetune",
            RunKind::Evaluate => "evaluate",
            RunKind::SynthData => "synth-data",
            RunKind::RfReport => "rf-report",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// Preset name, e.g. `U-Net_2_44` or `HRNet`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<String>,
    /// Full layer-level spec instead of a preset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inline: Option<ModelSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
    #[serde(default = "one")]
    pub in_channels: usize,
    #[serde(default = "one")]
    pub out_channels: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discriminator_width: Option<usize>,
}

fn one() -> usize {
    1
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            spec: None,
            inline: None,
            width: None,
            in_channels: 1,
            out_channels: 1,
            discriminator_width: None,
        }
    }
}

impl ModelSection {
    pub fn resolve(&self) -> Result<ModelSpec> {
        let spec = match (&self.spec, &self.inline) {
            (Some(_), Some(_)) => {
                return Err(Error::config("model", "give either `spec` or `inline`, not both"))
            }
            (None, None) => return Err(Error::config("model.spec", "a model spec is required")),
            (Some(name), None) => ModelSpec::preset_with(name, self.in_channels, self.out_channels, self.width)
                .map_err(|e| Error::config("model.spec", e.to_string()))?,
            (None, Some(s)) => s.clone(),
        };
        spec.validate().map_err(|e| Error::config("model", e.to_string()))?;
        Ok(spec)
    }

    /// Patch discriminator over (input, image) pairs of the generator.
    pub fn discriminator(&self, generator: &ModelSpec) -> Result<ModelSpec> {
        ModelSpec::preset_with(DISC_PRESET, generator.in_channels, generator.out_channels, self.discriminator_width)
            .map(|mut d| {
                d.in_channels = generator.in_channels + generator.out_channels;
                d
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Root of a dataset in the directory layout.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub root: Option<PathBuf>,
    /// Layout manifest; defaults to `<root>/manifest.toml`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    /// Generate a synthetic corpus in memory instead of reading `root`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SynthParams>,
    /// Used when the source has no named splits.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneSection {
    pub task: Task,
    #[serde(default = "random_init")]
    pub init: InitMode,
    /// Centre crop at validation; defaults to the training crop.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_crop: Option<usize>,
}

fn random_init() -> InitMode {
    InitMode::Random
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateSection {
    pub task: Task,
    /// Directory holding `.ckpt` files, or explicit files.
    pub checkpoints: Vec<PathBuf>,
    #[serde(default = "csv")]
    pub format: TableFormat,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crop: Option<usize>,
    #[serde(default = "eval_batch")]
    pub batch_size: usize,
}

fn csv() -> TableFormat {
    TableFormat::Csv
}

fn eval_batch() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RfReportSection {
    /// Presets to report; empty means all nine U-Nets.
    #[serde(default)]
    pub specs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthDataSection {
    #[serde(default)]
    pub params: SynthParams,
    #[serde(default = "default_synth_split")]
    pub split: SplitSpec,
}

fn default_synth_split() -> SplitSpec {
    SplitSpec::fractions(0.6, 0.2, 0.2, 0)
}

impl Default for SynthDataSection {
    fn default() -> Self {
        Self {
            params: SynthParams::default(),
            split: default_synth_split(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: RunKind,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    pub model: ModelSection,
    pub hyper: TrainHyper,
    pub corruption: CorruptionPolicy,
    pub augment: AugmentPolicy,
    pub data: DataSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finetune: Option<FinetuneSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evaluate: Option<EvaluateSection>,
    pub rf_report: RfReportSection,
    pub synth: SynthDataSection,
}

/// Fills `defaults` with the user table, key by key at the top level of
/// each section, so that partially given sections keep remaining defaults.
fn overlay(mut defaults: toml::Table, user: &toml::Table, sections: &[&str]) -> toml::Table {
    for (k, v) in user {
        match (sections.contains(&k.as_str()), defaults.get_mut(k), v) {
            (true, Some(toml::Value::Table(d)), toml::Value::Table(u)) => {
                for (uk, uv) in u {
                    d.insert(uk.clone(), uv.clone());
                }
            }
            _ => {
                defaults.insert(k.clone(), v.clone());
            }
        }
    }
    defaults
}

impl ExperimentConfig {
    /// Parses and validates; omitted keys are filled with defaults that
    /// depend on the run kind (and, for fine-tuning, the task).
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let user: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::config("<root>", e.message()))?;
        let kind: RunKind = match user.get("kind") {
            Some(v) => v
                .clone()
                .try_into()
                .map_err(|_| Error::config("kind", format!("unknown run kind {v}; expected pretrain, finetune, evaluate, synth-data or rf-report")))?,
            None => return Err(Error::config("kind", "missing run kind")),
        };
        let seed = match user.get("seed") {
            Some(v) => v.as_integer().filter(|s| *s >= 0).ok_or_else(|| Error::config("seed", "must be a non-negative integer"))? as u64,
            None => 0,
        };
        let task = user
            .get("finetune")
            .and_then(|f| f.get("task"))
            .and_then(|t| t.as_str())
            .and_then(|t| t.parse::<Task>().ok());

        let mut hyper = match kind {
            RunKind::Finetune => TrainHyper::finetune(),
            _ => TrainHyper::pretrain(),
        };
        hyper.seed = seed;
        let crop = match task {
            Some(Task::Segmentation) | None => SEGMENTATION_CROP,
            Some(_) => RESTORATION_CROP,
        };
        let mut synth = SynthDataSection::default();
        synth.split.seed = seed;
        let defaults = DefaultsView {
            kind,
            seed,
            model: ModelSection::default(),
            hyper,
            corruption: CorruptionPolicy::default(),
            augment: AugmentPolicy {
                crop_size: crop,
                ..AugmentPolicy::default()
            },
            data: DataSection::default(),
            rf_report: RfReportSection::default(),
            synth,
        };
        let defaults = match toml::Value::try_from(&defaults) {
            Ok(toml::Value::Table(t)) => t,
            other => return Err(Error::config("<defaults>", format!("{other:?}"))),
        };
        let merged = overlay(
            defaults,
            &user,
            &["model", "hyper", "corruption", "augment", "data", "rf_report", "synth"],
        );
        let cfg: ExperimentConfig = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| Error::config(error_key(&e), e.message()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| e.context(format!("config {}", path.display())))
    }

    /// The fully filled configuration as TOML.
    pub fn effective_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("<effective>", e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            RunKind::Pretrain | RunKind::Finetune => {
                self.hyper.validate()?;
                self.model.resolve()?;
                self.corruption.validate().map_err(|e| Error::config("corruption", e.to_string()))?;
                self.augment.validate().map_err(|e| Error::config("augment", e.to_string()))?;
                if self.data.root.is_none() && self.data.synthetic.is_none() {
                    return Err(Error::config("data", "give `root` or `synthetic`"));
                }
                if self.kind == RunKind::Finetune {
                    let f = self
                        .finetune
                        .as_ref()
                        .ok_or_else(|| Error::config("finetune", "section required for a finetune run"))?;
                    if f.task == Task::Pretext {
                        return Err(Error::config("finetune.task", "pretext is trained with `pretrain`"));
                    }
                }
            }
            RunKind::Evaluate => {
                let e = self
                    .evaluate
                    .as_ref()
                    .ok_or_else(|| Error::config("evaluate", "section required for an evaluate run"))?;
                if e.checkpoints.is_empty() {
                    return Err(Error::config("evaluate.checkpoints", "no checkpoints given"));
                }
                if self.data.root.is_none() && self.data.synthetic.is_none() {
                    return Err(Error::config("data", "give `root` or `synthetic`"));
                }
            }
            RunKind::SynthData => self.synth.params.validate().map_err(|e| Error::config("synth", e.to_string()))?,
            RunKind::RfReport => {
                for s in &self.rf_report.specs {
                    ModelSpec::preset(s).map_err(|e| Error::config("rf_report.specs", e.to_string()))?;
                }
            }
        }
        Ok(())
    }
}

/// Same shape as [`ExperimentConfig`] minus the optional run sections, used
/// only to serialize defaults.
#[derive(Serialize)]
struct DefaultsView {
    kind: RunKind,
    seed: u64,
    model: ModelSection,
    hyper: TrainHyper,
    corruption: CorruptionPolicy,
    augment: AugmentPolicy,
    data: DataSection,
    rf_report: RfReportSection,
    synth: SynthDataSection,
}

/// Best-effort dotted key for a deserialization error.
fn error_key(e: &toml::de::Error) -> String {
    let msg = e.message();
    for marker in ["unknown field `", "missing field `"] {
        if let Some(rest) = msg.split(marker).nth(1) {
            if let Some(name) = rest.split('`').next() {
                return name.to_string();
            }
        }
    }
    "<root>".to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_pretrain_gets_defaults() {
        let c = ExperimentConfig::from_toml_str(
            "kind = \"pretrain\"\n[model]\nspec = \"U-Net_2_44\"\n[data]\nroot = \"d\"\n",
        )
        .unwrap();
        assert_eq!(c.hyper.epochs, 60);
        assert_eq!(c.hyper.batch_size, 128);
        assert_eq!(c.hyper.learning_rate, 2e-4);
        assert_eq!(c.hyper.lambda_l1, 100.0);
        assert_eq!(c.hyper.adam_betas, [0.5, 0.999]);
        let back = ExperimentConfig::from_toml_str(&c.effective_toml().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn restoration_finetune_defaults() {
        let c = ExperimentConfig::from_toml_str(
            "kind = \"finetune\"\n[model]\nspec = \"HRNet\"\n[data]\nroot = \"d\"\n[finetune]\ntask = \"denoise\"\n",
        )
        .unwrap();
        assert_eq!(c.hyper.batch_size, 64);
        assert_eq!(c.augment.crop_size, 256);
    }

    #[test]
    fn segmentation_crop_default() {
        let c = ExperimentConfig::from_toml_str(
            "kind = \"finetune\"\n[model]\nspec = \"U-Net_4_424\"\n[data]\nroot = \"d\"\n[finetune]\ntask = \"segmentation\"\n",
        )
        .unwrap();
        assert_eq!(c.augment.crop_size, 448);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = ExperimentConfig::from_toml_str(
            "kind = \"pretrain\"\n[model]\nspec = \"U-Net_2_44\"\n[data]\nroot = \"d\"\n[hyper]\nepochz = 3\n",
        )
        .unwrap_err()
        .to_string();
        assert!(err.contains("epochz"), "{err}");
    }

    #[test]
    fn unknown_spec_lists_presets() {
        let err = ExperimentConfig::from_toml_str(
            "kind = \"pretrain\"\n[model]\nspec = \"U-Net_9_9\"\n[data]\nroot = \"d\"\n",
        )
        .unwrap_err()
        .to_string();
        assert!(err.contains("U-Net_4_424") && err.contains("HRNet"), "{err}");
    }

    #[test]
    fn partial_section_keeps_other_defaults() {
        let c = ExperimentConfig::from_toml_str(
            "kind = \"pretrain\"\nseed = 4\n[model]\nspec = \"U-Net_2_44\"\n[data]\nroot = \"d\"\n[hyper]\nepochs = 10\n",
        )
        .unwrap();
        assert_eq!((c.hyper.epochs, c.hyper.batch_size, c.hyper.seed), (10, 128, 4));
    }

    #[test]
    fn rf_report_needs_nothing_else() {
        let c = ExperimentConfig::from_toml_str("kind = \"rf-report\"\n").unwrap();
        assert!(c.rf_report.specs.is_empty());
    }
}
