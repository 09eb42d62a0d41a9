//! Dataset handles and the on-disk layout
//! `<root>/<task>/<split>/{inputs,targets}/<stem>.{png,tif,tiff}`.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{standardize, ImageGrid, SamplePair, Task};

const IMAGE_EXTS: [&str; 3] = ["png", "tif", "tiff"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    /// Binary mask; pixels above one half of full scale are foreground.
    Mask,
    /// Intensity image, standardized on load like the input.
    Image,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskLayout {
    pub task: Task,
    pub target: TargetKind,
    #[serde(default = "default_splits")]
    pub splits: Vec<String>,
}

fn default_splits() -> Vec<String> {
    ["train", "val", "test"].iter().map(|s| s.to_string()).collect()
}

/// Names the task folders under a dataset root and how to read targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutManifest {
    #[serde(rename = "task")]
    pub tasks: Vec<TaskLayout>,
}

impl LayoutManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::config(path.display().to_string(), e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("manifest", e.to_string()))
    }
}

#[derive(Debug, Clone)]
enum Source {
    Memory(Arc<SamplePair>),
    Files {
        input: PathBuf,
        target: PathBuf,
        kind: TargetKind,
    },
}

#[derive(Debug, Clone)]
struct Item {
    task: Task,
    split: Option<String>,
    stem: String,
    source: Source,
}

/// An ordered, read-only collection of samples. File-backed samples are
/// decoded (and standardized) on each access.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    items: Vec<Item>,
}

impl Dataset {
    /// Wraps in-memory samples as-is.
    pub fn from_samples(samples: Vec<SamplePair>) -> Self {
        let items = samples
            .into_iter()
            .enumerate()
            .map(|(i, s)| Item {
                task: s.task,
                split: None,
                stem: format!("{i:06}"),
                source: Source::Memory(Arc::new(s)),
            })
            .collect();
        Self { items }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, index: usize) -> Result<SamplePair> {
        let item = self.items.get(index).ok_or_else(|| {
            Error::Data(format!("sample {index} out of range ({} samples)", self.len()))
        })?;
        match &item.source {
            Source::Memory(s) => Ok((**s).clone()),
            Source::Files {
                input,
                target,
                kind,
            } => {
                let x = standardize(&read_grid(input)?);
                let y = read_grid(target)?;
                let y = match kind {
                    TargetKind::Mask => y.binarize(0.5),
                    TargetKind::Image => standardize(&y),
                };
                SamplePair::new(x, y, item.task).map_err(|e| e.context(input.display().to_string()))
            }
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = Result<SamplePair>> + '_ {
        (0..self.len()).map(move |i| self.get(i))
    }

    pub fn stem(&self, index: usize) -> Option<&str> {
        self.items.get(index).map(|i| i.stem.as_str())
    }

    /// Distinct task tags in first-seen order.
    pub fn tasks(&self) -> Vec<Task> {
        let mut out = Vec::new();
        for i in &self.items {
            if !out.contains(&i.task) {
                out.push(i.task);
            }
        }
        out
    }

    pub fn filter_task(&self, task: Task) -> Self {
        self.filter(|i| i.task == task)
    }

    pub fn filter_split(&self, split: &str) -> Self {
        self.filter(|i| i.split.as_deref() == Some(split))
    }

    fn filter(&self, f: impl Fn(&Item) -> bool) -> Self {
        Self {
            items: self.items.iter().filter(|i| f(i)).cloned().collect(),
        }
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            items: indices.iter().map(|&i| self.items[i].clone()).collect(),
        }
    }

    /// The first `n` samples (the pretraining-subset protocol).
    pub fn take(&self, n: usize) -> Self {
        Self {
            items: self.items.iter().take(n).cloned().collect(),
        }
    }

    /// Retags every sample with a split name.
    pub fn with_split(mut self, split: &str) -> Self {
        for i in &mut self.items {
            i.split = Some(split.to_string());
        }
        self
    }
}

fn read_grid(path: &Path) -> Result<ImageGrid> {
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        source: e,
    })?;
    let luma = img.to_luma32f();
    let (w, h) = luma.dimensions();
    ImageGrid::new(1, h as usize, w as usize, luma.into_raw())
}

fn list_images(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase());
        if ext.is_some_and(|e| IMAGE_EXTS.contains(&e.as_str())) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.push((stem.to_string(), path.clone()));
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Enumerates every sample named by `manifest` under `root`, in manifest
/// task order, then split order, then lexicographic stem order.
pub fn ingest_dataset(root: &Path, manifest: &LayoutManifest) -> Result<Dataset> {
    let mut items = Vec::new();
    for layout in &manifest.tasks {
        for split in &layout.splits {
            let base = root.join(layout.task.name()).join(split);
            let inputs = list_images(&base.join("inputs"))?;
            let targets = list_images(&base.join("targets"))?;
            for (stem, input) in inputs {
                let target = targets
                    .iter()
                    .find(|(s, _)| *s == stem)
                    .map(|(_, p)| p.clone())
                    .ok_or_else(|| {
                        Error::Data(format!("no target found for input {}", input.display()))
                    })?;
                items.push(Item {
                    task: layout.task,
                    split: Some(split.clone()),
                    stem,
                    source: Source::Files {
                        input,
                        target,
                        kind: layout.target,
                    },
                });
            }
        }
    }
    if items.is_empty() {
        return Err(Error::Data(format!("no samples under {}", root.display())));
    }
    Ok(Dataset { items })
}

/// Writes a single-channel grid as a 16-bit PNG, min-max scaled to the
/// full range (masks map 0/1 to 0/65535). Standardization on load undoes
/// the affine scaling.
pub fn write_png16(path: &Path, grid: &ImageGrid, is_mask: bool) -> Result<()> {
    if grid.channels() != 1 {
        return Err(Error::InvalidArgument("only single-channel grids can be written".into()));
    }
    let vals = grid.values();
    let (lo, hi) = if is_mask {
        (0.0, 1.0)
    } else {
        vals.iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)))
    };
    let span = if hi > lo { hi - lo } else { 1.0 };
    let px: Vec<u16> = vals
        .iter()
        .map(|&v| (((v - lo) / span).clamp(0.0, 1.0) * 65535.0).round() as u16)
        .collect();
    let buf: image::ImageBuffer<image::Luma<u16>, Vec<u16>> =
        image::ImageBuffer::from_raw(grid.width() as u32, grid.height() as u32, px)
            .ok_or_else(|| Error::Shape("pixel buffer size".into()))?;
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    buf.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Writes samples of one task/split into the directory layout.
pub fn write_split(root: &Path, task: Task, split: &str, samples: &[SamplePair]) -> Result<()> {
    let base = root.join(task.name()).join(split);
    for (i, s) in samples.iter().enumerate() {
        let stem = format!("{i:06}.png");
        write_png16(&base.join("inputs").join(&stem), &s.input, false)?;
        write_png16(&base.join("targets").join(&stem), &s.target, task.has_mask_target())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest(task: Task, target: TargetKind) -> LayoutManifest {
        LayoutManifest {
            tasks: vec![TaskLayout {
                task,
                target,
                splits: vec!["train".into()],
            }],
        }
    }

    fn pair(i: usize) -> SamplePair {
        let x = ImageGrid::from_fn(8, 8, |r, c| (r * 8 + c + i) as f32);
        let m = ImageGrid::from_fn(8, 8, |r, _| if r < 4 { 1.0 } else { 0.0 });
        SamplePair::new(x, m, Task::Segmentation).unwrap()
    }

    #[test]
    fn ingests_written_layout() {
        let dir = tempfile::tempdir().unwrap();
        let samples: Vec<_> = (0..8).map(pair).collect();
        write_split(dir.path(), Task::Segmentation, "train", &samples).unwrap();
        let ds = ingest_dataset(dir.path(), &manifest(Task::Segmentation, TargetKind::Mask)).unwrap();
        assert_eq!(ds.len(), 8);
        assert_eq!(ds.tasks(), vec![Task::Segmentation]);
        let s = ds.get(3).unwrap();
        assert_eq!(s.target, samples[3].target);
        assert!(s.input.mean().abs() < 1e-5);
        assert_eq!(ds.filter_split("train").len(), 8);
    }

    #[test]
    fn missing_target_names_file() {
        let dir = tempfile::tempdir().unwrap();
        write_split(dir.path(), Task::Segmentation, "train", &[pair(0), pair(1)]).unwrap();
        let orphan = dir.path().join("segmentation/train/targets/000001.png");
        fs::remove_file(orphan).unwrap();
        let err = ingest_dataset(dir.path(), &manifest(Task::Segmentation, TargetKind::Mask))
            .unwrap_err()
            .to_string();
        assert!(err.contains("000001.png"), "{err}");
    }

    #[test]
    fn empty_root_has_no_samples() {
        let dir = tempfile::tempdir().unwrap();
        let err = ingest_dataset(dir.path(), &manifest(Task::Denoise, TargetKind::Image))
            .unwrap_err()
            .to_string();
        assert!(err.contains("no samples"), "{err}");
    }

    #[test]
    fn unreadable_file_errors_on_access() {
        let dir = tempfile::tempdir().unwrap();
        write_split(dir.path(), Task::Denoise, "train", &[pair(0)].map(|mut p| {
            p.task = Task::Denoise;
            p
        }))
        .unwrap();
        fs::write(dir.path().join("denoise/train/inputs/000000.png"), b"not a png").unwrap();
        let ds = ingest_dataset(dir.path(), &manifest(Task::Denoise, TargetKind::Image)).unwrap();
        assert!(matches!(ds.get(0), Err(Error::Image { .. })));
    }

    #[test]
    fn manifest_toml_round_trip() {
        let m = manifest(Task::Superres, TargetKind::Image);
        let text = m.to_toml().unwrap();
        assert_eq!(toml::from_str::<LayoutManifest>(&text).unwrap(), m);
    }
}
