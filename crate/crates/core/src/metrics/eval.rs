use std::path::{Path, PathBuf};

use crate::data::augment::center_crop;
use crate::data::{ImageGrid, SamplePair};
use crate::error::{Error, Result};
use crate::experiment::checkpoint::CheckpointRecord;
use crate::model_zoo::{HeadTask, Network};
use crate::train::batch_tensors;

use super::{dice, l1, MetricKind, MASK_THRESHOLD};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub batch_size: usize,
    pub threshold: f32,
    /// Centre crop applied to every sample before evaluation.
    pub crop: Option<usize>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            batch_size: 8,
            threshold: MASK_THRESHOLD,
            crop: None,
        }
    }
}

/// Mean per-sample metric of `net` on `samples`. Parameters are only read.
pub fn evaluate_network(
    net: &Network,
    samples: &[SamplePair],
    kind: MetricKind,
    opts: &EvalOptions,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("evaluation set is empty".into()));
    }
    match (kind, net.head_task()) {
        (MetricKind::Dice, HeadTask::Segmentation) | (MetricKind::L1, HeadTask::Regression) => {}
        (k, h) => {
            return Err(Error::InvalidArgument(format!(
                "metric {k} does not apply to a {} head",
                h.name()
            )))
        }
    }
    let cropped: Vec<SamplePair>;
    let samples = match opts.crop {
        Some(c) => {
            cropped = samples.iter().map(|s| center_crop(s, c)).collect::<Result<_>>()?;
            &cropped[..]
        }
        None => samples,
    };
    let mut total = 0.0;
    for chunk in samples.chunks(opts.batch_size.max(1)) {
        let (x, _) = batch_tensors(chunk)?;
        let y = net.forward(&x)?;
        for (i, s) in chunk.iter().enumerate() {
            let out = ImageGrid::from_tensor(&y, i)?;
            total += match kind {
                MetricKind::Dice => dice(&out.binarize(opts.threshold), &s.target)?,
                MetricKind::L1 => l1(&out, &s.target)?,
            };
        }
    }
    Ok(total / samples.len() as f64)
}

/// One table row: a metric value per stored checkpoint epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub spec: String,
    pub init: String,
    pub cells: Vec<(usize, f64)>,
}

fn epoch_from_name(path: &Path) -> Option<usize> {
    let stem = path.file_stem()?.to_str()?;
    stem.rsplit_once("_e")?.1.parse().ok()
}

/// Evaluates every checkpoint with its parameters exactly as stored.
/// Cells come out sorted by epoch.
pub fn evaluate_checkpoints(
    checkpoints: &[PathBuf],
    test_set: &[SamplePair],
    kind: MetricKind,
    opts: &EvalOptions,
) -> Result<MetricRow> {
    if checkpoints.is_empty() {
        return Err(Error::InvalidArgument("no checkpoints to evaluate".into()));
    }
    let mut cells = Vec::with_capacity(checkpoints.len());
    let mut label: Option<(String, String)> = None;
    for path in checkpoints {
        let what = match epoch_from_name(path) {
            Some(e) => format!("checkpoint for epoch {e} ({})", path.display()),
            None => format!("checkpoint {}", path.display()),
        };
        let rec = CheckpointRecord::load(path).map_err(|e| e.context(what.clone()))?;
        let net = rec.to_network().map_err(|e| e.context(what.clone()))?;
        let value = evaluate_network(&net, test_set, kind, opts).map_err(|e| e.context(what))?;
        let this = (rec.meta.spec.name.clone(), rec.meta.provenance.clone());
        match &label {
            None => label = Some(this),
            Some(l) if *l != this => {
                return Err(Error::InvalidArgument(format!(
                    "checkpoints mix runs: {} {} and {} {}",
                    l.0, l.1, this.0, this.1
                )))
            }
            _ => {}
        }
        cells.push((rec.meta.epoch, value));
    }
    cells.sort_by_key(|c| c.0);
    if cells.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(Error::InvalidArgument("two checkpoints share an epoch".into()));
    }
    let (spec, init) = label.expect("at least one checkpoint");
    Ok(MetricRow { spec, init, cells })
}
