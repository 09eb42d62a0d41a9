//! Supervised downstream training from random or pretext-pretrained weights.

use std::path::PathBuf;

use candle_core::Tensor;
use log::info;
use serde::{Deserialize, Serialize};

use crate::data::{augment, AugmentPolicy, Dataset, SamplePair, Task};
use crate::error::{Error, Result};
use crate::experiment::checkpoint::{CheckpointMeta, CheckpointRecord};
use crate::metrics::{evaluate_network, EvalOptions, MetricKind, MetricSeries};
use crate::model_zoo::{build_generator, replace_head, transfer_weights, HeadTask, ModelSpec, Network, TransferReport};
use crate::train::{
    adam, batch_tensors, epoch_batches, mix_seed, step, write_series_csv, Goal, TrainHyper, WindowTracker,
};

/// Probability clamp inside the cross-entropy.
pub const BCE_EPS: f64 = 1e-7;

fn check_shapes(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!("{what}: {:?} vs {:?}", a.dims(), b.dims())));
    }
    if a.elem_count() == 0 {
        return Err(Error::InvalidArgument(format!("{what}: empty input")));
    }
    Ok(())
}

/// `−mean(m·ln p + (1−m)·ln(1−p))` with `p` clamped to `[ε, 1−ε]`.
pub fn bce_loss(pred: &Tensor, mask: &Tensor) -> Result<Tensor> {
    check_shapes(pred, mask, "bce_loss")?;
    let p = pred.clamp(BCE_EPS, 1.0 - BCE_EPS)?;
    let pos = (mask * p.log()?)?;
    let neg = ((1.0 - mask)? * (1.0 - &p)?.log()?)?;
    Ok((pos + neg)?.mean_all()?.neg()?)
}

/// `w1·mean|Δ| + w2·mean(Δ²)`.
pub fn regression_loss(pred: &Tensor, target: &Tensor, w1: f64, w2: f64) -> Result<Tensor> {
    check_shapes(pred, target, "regression_loss")?;
    if !(w1 >= 0.0 && w2 >= 0.0) {
        return Err(Error::InvalidArgument("loss weights must be non-negative".into()));
    }
    let d = (pred - target)?;
    let a = (d.abs()?.mean_all()? * w1)?;
    let b = (d.sqr()?.mean_all()? * w2)?;
    Ok((a + b)?)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    Random,
    Pretrained(PathBuf),
}

#[derive(Debug, Clone)]
pub struct FinetuneRun {
    pub task: Task,
    pub init: InitMode,
    pub spec: ModelSpec,
    pub hyper: TrainHyper,
    pub augment: AugmentPolicy,
    pub train: Dataset,
    pub val: Dataset,
    /// Centre crop for validation; `None` evaluates whole images.
    pub eval_crop: Option<usize>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug)]
pub struct FinetuneOutput {
    pub network: Network,
    pub checkpoints: Vec<CheckpointRecord>,
    pub checkpoint_paths: Vec<PathBuf>,
    pub series: MetricSeries,
    /// `R` or the pretrained checkpoint's tag, e.g. `P(50k)`.
    pub provenance: String,
    pub transfer: Option<TransferReport>,
}

pub fn metric_for(task: Task) -> Result<MetricKind> {
    match task {
        Task::Segmentation => Ok(MetricKind::Dice),
        Task::Denoise | Task::NoiseBgRemoval | Task::Superres => Ok(MetricKind::L1),
        Task::Pretext => Err(Error::InvalidArgument(
            "the pretext task is trained by the adversarial pretrainer".into(),
        )),
    }
}

pub fn head_for(task: Task) -> HeadTask {
    if task.has_mask_target() {
        HeadTask::Segmentation
    } else {
        HeadTask::Regression
    }
}

/// File-name form of a provenance tag: `R`, `P(50k)` becomes `P50k`.
pub fn init_label(provenance: &str) -> String {
    provenance.chars().filter(|c| c.is_ascii_alphanumeric()).collect()
}

impl FinetuneRun {
    pub fn validate(&self) -> Result<()> {
        metric_for(self.task)?;
        self.hyper.validate()?;
        self.augment.validate()?;
        if !self.spec.is_generator() {
            return Err(Error::Spec(format!("{} is not a generator", self.spec.name)));
        }
        let div = self.spec.spatial_divisor();
        for (what, size) in [("augment.crop_size", Some(self.augment.crop_size)), ("eval_crop", self.eval_crop)] {
            if let Some(s) = size {
                if s % div != 0 {
                    return Err(Error::config(what, format!("{s} is not divisible by {div} for {}", self.spec.name)));
                }
            }
        }
        if self.train.is_empty() || self.val.is_empty() {
            return Err(Error::InvalidArgument("fine-tuning needs non-empty train and val sets".into()));
        }
        Ok(())
    }

    /// Builds the initial network: fresh, or checkpoint body plus a fresh
    /// task head.
    pub fn initial_network(&self) -> Result<(Network, String, Option<TransferReport>)> {
        let seed = mix_seed(self.hyper.seed, &[0xf1]);
        let head_seed = mix_seed(self.hyper.seed, &[0x4ead]);
        let head = head_for(self.task);
        match &self.init {
            InitMode::Random => {
                let net = replace_head(build_generator(&self.spec, seed)?, head, head_seed)?;
                Ok((net, "R".to_string(), None))
            }
            InitMode::Pretrained(path) => {
                let rec = CheckpointRecord::load(path)?;
                let source = rec.to_network()?;
                let target = build_generator(&self.spec, seed)?;
                let (net, report) = transfer_weights(&source, target)?;
                let net = replace_head(net, head, head_seed)?;
                Ok((net, rec.meta.provenance.clone(), Some(report)))
            }
        }
    }
}

fn load(ds: &Dataset, task: Task) -> Result<Vec<SamplePair>> {
    let v: Vec<SamplePair> = ds.iter().collect::<Result<_>>()?;
    if let Some(bad) = v.iter().find(|s| s.task != task) {
        return Err(Error::Data(format!("{task} run got a {} sample", bad.task)));
    }
    Ok(v)
}

pub fn finetune(run: &FinetuneRun) -> Result<FinetuneOutput> {
    run.validate()?;
    let h = &run.hyper;
    let kind = metric_for(run.task)?;
    let train = load(&run.train, run.task)?;
    let val = load(&run.val, run.task)?;
    let (net, provenance, transfer) = run.initial_network()?;
    let mut opt = adam(&net, h)?;
    let eval = EvalOptions {
        crop: run.eval_crop,
        ..EvalOptions::default()
    };
    let label = init_label(&provenance);
    let mut series = MetricSeries::new(kind, format!("{} {provenance}", run.spec.name));
    series.initial = Some(evaluate_network(&net, &val, kind, &eval)?);

    let goal = if kind.higher_is_better() { Goal::Maximize } else { Goal::Minimize };
    let mut tracker = WindowTracker::new(h.checkpoint_interval_epochs, goal);
    let (mut checkpoints, mut paths) = (Vec::new(), Vec::new());
    for epoch in 1..=h.epochs {
        let mut total = 0.0f64;
        let batches = epoch_batches(train.len(), h.batch_size, h.seed, epoch);
        for (b, idx) in batches.iter().enumerate() {
            let pairs: Vec<SamplePair> = idx
                .iter()
                .map(|&i| augment(&train[i], &run.augment, mix_seed(h.seed, &[epoch as u64, i as u64, 0xa6])))
                .collect::<Result<_>>()?;
            let (x, y) = batch_tensors(&pairs)?;
            let pred = net.forward(&x)?;
            let loss = match kind {
                MetricKind::Dice => bce_loss(&pred, &y)?,
                MetricKind::L1 => regression_loss(&pred, &y, 1.0, 1.0)?,
            };
            total += f64::from(step(&mut opt, &loss, &format!("epoch {epoch} batch {b}"))?);
        }
        let v = evaluate_network(&net, &val, kind, &eval)?;
        if !v.is_finite() {
            return Err(Error::Diverged(format!("validation {kind} is {v} after epoch {epoch}")));
        }
        series.push(epoch, v)?;
        info!(
            "finetune {} {} {provenance} epoch {epoch}: loss {:.4} val {kind} {v:.5}",
            run.spec.name,
            run.task,
            total / batches.len() as f64
        );
        if let Some(best) = tracker.observe(epoch, v, &net)? {
            let meta = CheckpointMeta {
                spec: run.spec.clone(),
                head_task: net.head_task(),
                head_channels: net.output_channels(),
                task: run.task,
                epoch,
                best_epoch: best.epoch,
                best_val_metric: best.metric,
                metric: kind,
                provenance: provenance.clone(),
                hyper: h.clone(),
            };
            let rec = CheckpointRecord::from_snapshot(best.params, meta)?;
            if let Some(dir) = &run.out_dir {
                let p = dir.join(format!("{}_{}_{label}_e{epoch}.ckpt", run.spec.name, run.task));
                rec.save(&p)?;
                paths.push(p);
            }
            checkpoints.push(rec);
        }
    }
    if let Some(dir) = &run.out_dir {
        write_series_csv(dir, &format!("{}_{}_{label}", run.spec.name, run.task), &series, "val_metric")?;
    }
    Ok(FinetuneOutput {
        network: net,
        checkpoints,
        checkpoint_paths: paths,
        series,
        provenance,
        transfer,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::DType;

    fn t(v: &[f64]) -> Tensor {
        Tensor::from_vec(v.to_vec(), (1, 1, 1, v.len()), &crate::device()).unwrap()
    }

    fn val(x: Tensor) -> f64 {
        x.to_dtype(DType::F64).unwrap().to_scalar::<f64>().unwrap()
    }

    #[test]
    fn bce_hand_values() {
        assert!((val(bce_loss(&t(&[0.5; 4]), &t(&[1.0, 0.0, 1.0, 0.0])).unwrap()) - 2f64.ln()).abs() < 1e-12);
        let v = val(bce_loss(&t(&[0.9, 0.1]), &t(&[1.0, 0.0])).unwrap());
        assert!((v - (-(0.9f64.ln()))).abs() < 1e-12);
        assert!(val(bce_loss(&t(&[1.0, 0.0]), &t(&[1.0, 0.0])).unwrap()) <= 1.1e-7);
    }

    #[test]
    fn bce_label_flip_symmetry() {
        let p = [0.2, 0.7, 0.95, 0.01];
        let m = [1.0, 0.0, 1.0, 0.0];
        let flip = |v: &[f64]| v.iter().map(|x| 1.0 - x).collect::<Vec<_>>();
        let a = val(bce_loss(&t(&p), &t(&m)).unwrap());
        let b = val(bce_loss(&t(&flip(&p)), &t(&flip(&m))).unwrap());
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn regression_hand_values() {
        assert!((val(regression_loss(&t(&[1.0, -3.0]), &t(&[0.0, 0.0]), 1.0, 0.5).unwrap()) - 4.5).abs() < 1e-12);
        assert_eq!(val(regression_loss(&t(&[2.0; 3]), &t(&[1.0; 3]), 1.0, 1.0).unwrap()), 2.0);
        assert_eq!(val(regression_loss(&t(&[2.0; 3]), &t(&[2.0; 3]), 1.0, 1.0).unwrap()), 0.0);
        assert!(regression_loss(&t(&[1.0]), &t(&[1.0, 2.0]), 1.0, 1.0).is_err());
    }

    #[test]
    fn labels() {
        assert_eq!(init_label("P(50k)"), "P50k");
        assert_eq!(init_label("R"), "R");
        assert!(metric_for(Task::Pretext).is_err());
    }
}
