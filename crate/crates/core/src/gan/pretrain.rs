use std::path::PathBuf;

use candle_core::Tensor;
use log::info;

use crate::data::{pretext_pair, CorruptionPolicy, Dataset, ImageGrid, SamplePair, Task};
use crate::error::{Error, Result};
use crate::experiment::checkpoint::{CheckpointMeta, CheckpointRecord};
use crate::metrics::{evaluate_network, EvalOptions, MetricKind, MetricSeries};
use crate::model_zoo::{build_discriminator, build_generator, ModelSpec, Network};
use crate::train::{
    adam, batch_tensors, epoch_batches, mix_seed, step, write_series_csv, Goal, TrainHyper, WindowTracker,
};

use super::{generator_objective, l1_loss, lsgan_d_loss, lsgan_g_loss};

#[derive(Debug, Clone)]
pub struct PretrainRun {
    pub generator: ModelSpec,
    pub discriminator: ModelSpec,
    pub hyper: TrainHyper,
    pub corruption: CorruptionPolicy,
    /// Unlabeled images; each sample's input is used.
    pub train: Dataset,
    pub val: Dataset,
    /// Checkpoints and the metric CSV land here when set.
    pub out_dir: Option<PathBuf>,
}

impl PretrainRun {
    /// Subset tag used in file names and provenance, e.g. `50k` or `64`.
    pub fn subset_label(&self) -> String {
        let n = self.hyper.subset_size.unwrap_or(self.train.len()).min(self.train.len());
        if n >= 1000 && n % 1000 == 0 {
            format!("{}k", n / 1000)
        } else {
            n.to_string()
        }
    }

    pub fn checkpoint_name(&self, epoch: usize) -> String {
        format!("{}_pretext_{}_e{epoch}.ckpt", self.generator.name, self.subset_label())
    }

    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        self.corruption.validate()?;
        if !self.generator.is_generator() {
            return Err(Error::Spec(format!("{} is not a generator", self.generator.name)));
        }
        let want = self.generator.in_channels + self.generator.out_channels;
        if self.discriminator.in_channels != want {
            return Err(Error::Spec(format!(
                "discriminator takes {} channels, generator pairs have {want}",
                self.discriminator.in_channels
            )));
        }
        if self.generator.in_channels != self.generator.out_channels {
            return Err(Error::Spec(
                "pretext generator must map images to images of the same channel count".into(),
            ));
        }
        if self.train.is_empty() {
            return Err(Error::InvalidArgument("pretraining set is empty".into()));
        }
        if self.val.is_empty() {
            return Err(Error::InvalidArgument("pretraining validation set is empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct PretrainOutput {
    pub generator: Network,
    pub discriminator: Network,
    pub checkpoints: Vec<CheckpointRecord>,
    pub checkpoint_paths: Vec<PathBuf>,
    pub series: MetricSeries,
}

/// Mean per-sample L1 between `net(input)` and `target`; read-only.
pub fn validate_generator(net: &Network, val: &[SamplePair]) -> Result<f64> {
    evaluate_network(net, val, MetricKind::L1, &EvalOptions::default())
}

fn images(ds: &Dataset) -> Result<Vec<ImageGrid>> {
    ds.iter().map(|s| s.map(|p| p.input)).collect()
}

fn cat_pair(x: &Tensor, y: &Tensor) -> Result<Tensor> {
    Ok(Tensor::cat(&[x, y], 1)?)
}

/// One discriminator update followed by one generator update.
pub(crate) fn gan_step(
    g: &Network,
    d: &Network,
    opt_g: &mut candle_nn::AdamW,
    opt_d: &mut candle_nn::AdamW,
    x: &Tensor,
    y: &Tensor,
    lambda_l1: f64,
    what: &str,
) -> Result<(f32, f32)> {
    let fake = g.forward(x)?.detach();
    let real_s = d.forward(&cat_pair(x, y)?)?;
    let fake_s = d.forward(&cat_pair(x, &fake)?)?;
    let d_loss = step(opt_d, &lsgan_d_loss(&real_s, &fake_s)?, &format!("{what} D-step"))?;

    let fake = g.forward(x)?;
    let adv = lsgan_g_loss(&d.forward(&cat_pair(x, &fake)?)?)?;
    let obj = generator_objective(&adv, &l1_loss(&fake, y)?, lambda_l1)?;
    let g_loss = step(opt_g, &obj, &format!("{what} G-step"))?;
    Ok((d_loss, g_loss))
}

pub fn pretrain(run: &PretrainRun) -> Result<PretrainOutput> {
    run.validate()?;
    let h = &run.hyper;
    let mut train_imgs = images(&run.train)?;
    if let Some(n) = h.subset_size {
        train_imgs.truncate(n);
    }
    let val: Vec<SamplePair> = images(&run.val)?
        .iter()
        .enumerate()
        .map(|(i, img)| pretext_pair(img, &run.corruption, mix_seed(h.seed, &[0x7a1, i as u64])))
        .collect::<Result<_>>()?;

    let g = build_generator(&run.generator, mix_seed(h.seed, &[0x6e]))?;
    let d = build_discriminator(&run.discriminator, mix_seed(h.seed, &[0xd1]))?;
    let mut opt_g = adam(&g, h)?;
    let mut opt_d = adam(&d, h)?;

    let label = format!("{} P({})", run.generator.name, run.subset_label());
    let mut series = MetricSeries::new(MetricKind::L1, label);
    series.initial = Some(validate_generator(&g, &val)?);
    info!("pretrain {}: initial val L1 {:.5}", run.generator.name, series.initial.unwrap_or(f64::NAN));

    let mut tracker = WindowTracker::new(h.checkpoint_interval_epochs, Goal::Minimize);
    let mut checkpoints = Vec::new();
    let mut paths = Vec::new();
    for epoch in 1..=h.epochs {
        let (mut dsum, mut gsum, mut nb) = (0.0f64, 0.0f64, 0usize);
        for (b, idx) in epoch_batches(train_imgs.len(), h.batch_size, h.seed, epoch).iter().enumerate() {
            let pairs: Vec<SamplePair> = idx
                .iter()
                .map(|&i| {
                    pretext_pair(
                        &train_imgs[i],
                        &run.corruption,
                        mix_seed(h.seed, &[epoch as u64, i as u64]),
                    )
                })
                .collect::<Result<_>>()?;
            let (x, y) = batch_tensors(&pairs)?;
            let what = format!("epoch {epoch} batch {b}");
            let (dl, gl) = gan_step(&g, &d, &mut opt_g, &mut opt_d, &x, &y, h.lambda_l1, &what)?;
            dsum += f64::from(dl);
            gsum += f64::from(gl);
            nb += 1;
        }
        let v = validate_generator(&g, &val)?;
        if !v.is_finite() {
            return Err(Error::Diverged(format!("validation L1 is {v} after epoch {epoch}")));
        }
        series.push(epoch, v)?;
        info!(
            "pretrain epoch {epoch}: D {:.4} G {:.4} val L1 {v:.5}",
            dsum / nb as f64,
            gsum / nb as f64
        );
        if let Some(best) = tracker.observe(epoch, v, &g)? {
            let meta = CheckpointMeta {
                spec: run.generator.clone(),
                head_task: g.head_task(),
                head_channels: g.output_channels(),
                task: Task::Pretext,
                epoch,
                best_epoch: best.epoch,
                best_val_metric: best.metric,
                metric: MetricKind::L1,
                provenance: format!("P({})", run.subset_label()),
                hyper: h.clone(),
            };
            let rec = CheckpointRecord::from_snapshot(best.params, meta)?;
            if let Some(dir) = &run.out_dir {
                let p = dir.join(run.checkpoint_name(epoch));
                rec.save(&p)?;
                paths.push(p);
            }
            checkpoints.push(rec);
        }
    }
    if let Some(dir) = &run.out_dir {
        write_series_csv(dir, &format!("{}_pretext_{}", run.generator.name, run.subset_label()), &series, "val_l1")?;
    }
    Ok(PretrainOutput {
        generator: g,
        discriminator: d,
        checkpoints,
        checkpoint_paths: paths,
        series,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_corpus, SynthParams};
    use crate::train::adam;

    fn run(epochs: usize, corruption: CorruptionPolicy) -> PretrainRun {
        let c = synth_corpus(&SynthParams { count: 16, size: 32, ..SynthParams::default() }, 5).unwrap();
        let ds = c.dataset(Task::Pretext).unwrap();
        PretrainRun {
            generator: ModelSpec::preset_with("U-Net_2_44", 1, 1, Some(4)).unwrap(),
            discriminator: ModelSpec::patchgan(1, 4),
            hyper: TrainHyper {
                epochs,
                batch_size: 4,
                checkpoint_interval_epochs: 1,
                learning_rate: 2e-3,
                ..TrainHyper::pretrain()
            },
            corruption,
            train: ds.clone(),
            val: ds,
            out_dir: None,
        }
    }

    #[test]
    fn identity_task_improves_after_one_epoch() {
        let out = pretrain(&run(1, CorruptionPolicy::none())).unwrap();
        assert!(out.series.points[0].1 <= out.series.initial.unwrap());
        assert_eq!(out.checkpoints.len(), 1);
    }

    #[test]
    fn steps_touch_only_their_network() {
        let r = run(1, CorruptionPolicy::default());
        let g = build_generator(&r.generator, 1).unwrap();
        let d = build_discriminator(&r.discriminator, 2).unwrap();
        let x = Tensor::randn(0f32, 1.0, (2, 1, 32, 32), &crate::device()).unwrap();
        let y = Tensor::randn(0f32, 1.0, (2, 1, 32, 32), &crate::device()).unwrap();
        let mut opt_g = adam(&g, &r.hyper).unwrap();
        let mut opt_d = adam(&d, &r.hyper).unwrap();

        let (g0, d0) = (g.param_digest().unwrap(), d.snapshot().unwrap());
        let fake = g.forward(&x).unwrap().detach();
        let real_s = d.forward(&cat_pair(&x, &y).unwrap()).unwrap();
        let fake_s = d.forward(&cat_pair(&x, &fake).unwrap()).unwrap();
        step(&mut opt_d, &lsgan_d_loss(&real_s, &fake_s).unwrap(), "d").unwrap();
        assert_eq!(g.param_digest().unwrap(), g0);
        let d1 = d.snapshot().unwrap();
        assert!(d0.iter().any(|(k, t)| {
            let diff = (t - &d1[k]).unwrap().abs().unwrap().sum_all().unwrap().to_scalar::<f32>().unwrap();
            diff > 0.0
        }));

        let d_digest = d.param_digest().unwrap();
        let g_digest = g.param_digest().unwrap();
        let fake = g.forward(&x).unwrap();
        let adv = lsgan_g_loss(&d.forward(&cat_pair(&x, &fake).unwrap()).unwrap()).unwrap();
        let obj = generator_objective(&adv, &l1_loss(&fake, &y).unwrap(), 100.0).unwrap();
        step(&mut opt_g, &obj, "g").unwrap();
        assert_eq!(d.param_digest().unwrap(), d_digest);
        assert_ne!(g.param_digest().unwrap(), g_digest);
    }

    #[test]
    fn checkpoint_schedule_and_determinism() {
        let mut r = run(2, CorruptionPolicy::default());
        r.hyper.checkpoint_interval_epochs = 1;
        let a = pretrain(&r).unwrap();
        let b = pretrain(&r).unwrap();
        assert_eq!(a.series, b.series);
        assert_eq!(a.checkpoints.len(), 2);
        assert_eq!(r.checkpoint_name(5), "U-Net_2_44_pretext_16_e5.ckpt");
    }

    #[test]
    fn mismatched_discriminator_rejected() {
        let mut r = run(1, CorruptionPolicy::none());
        r.discriminator = ModelSpec::patchgan(2, 4);
        assert!(pretrain(&r).is_err());
    }

    #[test]
    fn validation_is_read_only_and_repeatable() {
        let r = run(1, CorruptionPolicy::none());
        let g = build_generator(&r.generator, 0).unwrap();
        let val: Vec<_> = r.val.iter().map(|s| s.unwrap()).collect();
        let before = g.param_digest().unwrap();
        let a = validate_generator(&g, &val).unwrap();
        assert_eq!(a, validate_generator(&g, &val).unwrap());
        assert_eq!(before, g.param_digest().unwrap());
        assert!(validate_generator(&g, &[]).is_err());
    }
}
