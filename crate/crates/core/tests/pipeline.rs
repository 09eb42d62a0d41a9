use emss_core::data::{synth_corpus, AugmentPolicy, CorruptionPolicy, SynthParams, Task};
use emss_core::experiment::{load_splits, run, CheckpointRecord, ExperimentConfig};
use emss_core::finetune::{finetune, FinetuneRun, InitMode};
use emss_core::gan::{pretrain, PretrainRun};
use emss_core::metrics::{evaluate_checkpoints, EvalOptions, MetricKind};
use emss_core::train::TrainHyper;
use emss_core::ModelSpec;

fn tiny_hyper(epochs: usize, interval: usize) -> TrainHyper {
    TrainHyper {
        epochs,
        batch_size: 4,
        checkpoint_interval_epochs: interval,
        seed: 9,
        ..TrainHyper::pretrain()
    }
}

#[test]
fn pretrained_body_is_copied_bit_for_bit() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth_corpus(&SynthParams { count: 12, size: 32, ..SynthParams::default() }, 4).unwrap();
    let pre = corpus.dataset(Task::Pretext).unwrap();
    let out = pretrain(&PretrainRun {
        generator: ModelSpec::preset_with("U-Net_2_44", 1, 1, Some(2)).unwrap(),
        discriminator: ModelSpec::preset_with("PatchGAN_70", 1, 1, Some(2)).unwrap(),
        hyper: tiny_hyper(1, 1),
        corruption: CorruptionPolicy::default(),
        train: pre.take(8),
        val: pre.subset(&[8, 9]),
        out_dir: Some(dir.path().to_path_buf()),
    })
    .unwrap();
    let ckpt = out.checkpoint_paths[0].clone();

    let seg = corpus.dataset(Task::Segmentation).unwrap();
    let run = FinetuneRun {
        task: Task::Segmentation,
        init: InitMode::Pretrained(ckpt.clone()),
        spec: ModelSpec::preset_with("U-Net_2_44", 1, 1, Some(2)).unwrap(),
        hyper: tiny_hyper(1, 1),
        augment: AugmentPolicy::identity(32),
        train: seg.take(8),
        val: seg.subset(&[8, 9]),
        eval_crop: None,
        out_dir: None,
    };
    let (net, provenance, report) = run.initial_network().unwrap();
    assert_eq!(provenance, "P(8)");
    let report = report.unwrap();
    assert!(report.fraction_transferred(net.params().len()) > 0.9);

    let rec = CheckpointRecord::load(&ckpt).unwrap();
    let mut compared = 0;
    for (name, v) in net.params() {
        if net.is_head_param(name) {
            continue;
        }
        let a = v.as_tensor().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let b = rec.params[name].flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()), "{name}");
        compared += 1;
    }
    assert!(compared > 0);
}

#[test]
fn checkpoint_evaluation_is_repeatable_and_batch_independent() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth_corpus(&SynthParams { count: 12, size: 32, ..SynthParams::default() }, 8).unwrap();
    let seg = corpus.dataset(Task::Segmentation).unwrap();
    let res = finetune(&FinetuneRun {
        task: Task::Segmentation,
        init: InitMode::Random,
        spec: ModelSpec::preset_with("U-Net_2_44", 1, 1, Some(2)).unwrap(),
        hyper: tiny_hyper(4, 2),
        augment: AugmentPolicy { crop_size: 24, ..AugmentPolicy::default() },
        train: seg.take(8),
        val: seg.subset(&[8, 9]),
        eval_crop: None,
        out_dir: Some(dir.path().to_path_buf()),
    })
    .unwrap();
    assert_eq!(res.series.len(), 4);
    assert_eq!(res.checkpoint_paths.len(), 2);

    let test: Vec<_> = seg.subset(&[10, 11]).iter().collect::<Result<_, _>>().unwrap();
    let eval = |bs| {
        let opts = EvalOptions { batch_size: bs, ..EvalOptions::default() };
        evaluate_checkpoints(&res.checkpoint_paths, &test, MetricKind::Dice, &opts).unwrap()
    };
    let (a, b, c) = (eval(8), eval(8), eval(1));
    assert_eq!(a.cells, b.cells);
    for (x, y) in a.cells.iter().zip(&c.cells) {
        assert_eq!(x.0, y.0);
        assert!((x.1 - y.1).abs() < 1e-6);
    }
    assert_eq!(a.cells.iter().map(|c| c.0).collect::<Vec<_>>(), vec![2, 4]);
}

#[test]
fn synthetic_layout_feeds_configured_splits() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::from_toml_str(
        "kind = \"synth-data\"\nseed = 5\n[synth.params]\ncount = 10\nsize = 32\n[synth.split]\ntrain = 6\nval = 2\ntest = 2\n",
    )
    .unwrap();
    run(&cfg, dir.path()).unwrap();

    let root = dir.path().join("data");
    let text = format!(
        "kind = \"finetune\"\n[model]\nspec = \"U-Net_2_44\"\n[data]\nroot = {root:?}\n[finetune]\ntask = \"denoise\"\n"
    );
    let ft = ExperimentConfig::from_toml_str(&text).unwrap();
    let (train, val, test) = load_splits(&ft, Task::Denoise).unwrap();
    assert_eq!((train.len(), val.len(), test.len()), (6, 2, 2));
    let s = train.get(0).unwrap();
    assert_eq!(s.task, Task::Denoise);
    assert!(s.input.mean().abs() < 1e-4);
}

#[test]
fn shipped_configs_parse() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "toml") {
            let cfg = ExperimentConfig::load(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            cfg.validate().unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            n += 1;
        }
    }
    assert_eq!(n, 4);
}
