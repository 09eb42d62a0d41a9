use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;

use crate::data::{ingest_dataset, split, synth_corpus, Dataset, LayoutManifest, SamplePair, SplitSpec, Task};
use crate::error::{Error, Result};
use crate::finetune::{finetune, metric_for, FinetuneRun};
use crate::gan::{pretrain, PretrainRun};
use crate::metrics::{emit_convergence_plot, emit_table, evaluate_checkpoints, EvalOptions, MetricTable, TableFormat};
use crate::model_zoo::{build_generator, measure_footprint, receptive_field, unet_preset_names, ModelSpec};

use super::checkpoint::{write_atomic, CheckpointRecord};
use super::config::{ExperimentConfig, RunKind};

pub const EFFECTIVE_CONFIG: &str = "effective_config.toml";

/// What a run left on disk.
#[derive(Debug, Clone, Default)]
pub struct RunSummary {
    pub artifacts: Vec<PathBuf>,
    /// Short human-readable result line.
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RfRow {
    pub spec: String,
    pub target_rf: Option<usize>,
    pub analytic_rf: usize,
    /// Phase-averaged probe footprint.
    pub measured_rf: f64,
    /// Smallest and largest single-pixel footprint.
    pub footprint_range: (usize, usize),
}

/// Analytic and probed receptive fields of the named presets (all nine
/// U-Nets when `specs` is empty).
pub fn rf_report(specs: &[String]) -> Result<Vec<RfRow>> {
    let names: Vec<String> = if specs.is_empty() {
        unet_preset_names().into_iter().map(String::from).collect()
    } else {
        specs.to_vec()
    };
    names
        .iter()
        .map(|name| {
            // The probe only depends on the layer geometry, so a narrow
            // width keeps it cheap.
            let spec = ModelSpec::preset_with(name, 1, 1, Some(2))?;
            let net = build_generator(&spec, 0)?;
            let f = measure_footprint(&net)?;
            Ok(RfRow {
                spec: spec.name.clone(),
                target_rf: spec.target_rf,
                analytic_rf: receptive_field(&spec)?,
                measured_rf: f.mean,
                footprint_range: (f.min, f.max),
            })
        })
        .collect()
}

pub fn rf_report_csv(rows: &[RfRow]) -> String {
    let mut s = String::from("spec,target_rf,analytic_rf,measured_rf,footprint_min,footprint_max\n");
    for r in rows {
        let t = r.target_rf.map(|t| t.to_string()).unwrap_or_default();
        let (lo, hi) = r.footprint_range;
        s.push_str(&format!("{},{t},{},{},{lo},{hi}\n", r.spec, r.analytic_rf, r.measured_rf));
    }
    s
}

/// Train / val / test datasets of `task` as configured.
pub fn load_splits(cfg: &ExperimentConfig, task: Task) -> Result<(Dataset, Dataset, Dataset)> {
    let fallback = || cfg.data.split.clone().unwrap_or(SplitSpec::fractions(0.6, 0.2, 0.2, cfg.seed));
    if let Some(p) = &cfg.data.synthetic {
        let corpus = synth_corpus(p, cfg.seed)?;
        return split(&corpus.dataset(task)?, &fallback());
    }
    let root = cfg
        .data
        .root
        .as_ref()
        .ok_or_else(|| Error::config("data.root", "no dataset given"))?;
    let manifest_path = cfg.data.manifest.clone().unwrap_or_else(|| root.join("manifest.toml"));
    let manifest = LayoutManifest::load(&manifest_path)?;
    let all = ingest_dataset(root, &manifest)?.filter_task(task);
    if all.is_empty() {
        return Err(Error::Data(format!("{} holds no {task} samples", root.display())));
    }
    let train = all.filter_split("train");
    if train.is_empty() {
        return split(&all, &fallback());
    }
    Ok((train, all.filter_split("val"), all.filter_split("test")))
}

fn materialize(ds: &Dataset) -> Result<Vec<SamplePair>> {
    ds.iter().collect()
}

fn ckpt_files(entries: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in entries {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)
                .map_err(|e| Error::io(p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "ckpt"))
                .collect();
            found.sort();
            out.extend(found);
        } else {
            out.push(p.clone());
        }
    }
    if out.is_empty() {
        return Err(Error::config("evaluate.checkpoints", "no .ckpt files found"));
    }
    Ok(out)
}

fn run_pretrain(cfg: &ExperimentConfig, out: &Path, summary: &mut RunSummary) -> Result<()> {
    let generator = cfg.model.resolve()?;
    let discriminator = cfg.model.discriminator(&generator)?;
    let (train, val, _) = load_splits(cfg, Task::Pretext)?;
    let run = PretrainRun {
        generator,
        discriminator,
        hyper: cfg.hyper.clone(),
        corruption: cfg.corruption.clone(),
        train,
        val,
        out_dir: Some(out.to_path_buf()),
    };
    let res = pretrain(&run)?;
    summary.artifacts.extend(res.checkpoint_paths.iter().cloned());
    let plot = out.join("convergence.svg");
    emit_convergence_plot(std::slice::from_ref(&res.series), &plot)?;
    summary.artifacts.push(plot);
    summary.message = format!(
        "pretrained {}: val L1 {:.5} -> {:.5}, {} checkpoints",
        run.generator.name,
        res.series.initial.unwrap_or(f64::NAN),
        res.series.last().unwrap_or(f64::NAN),
        res.checkpoints.len()
    );
    Ok(())
}

fn run_finetune(cfg: &ExperimentConfig, out: &Path, summary: &mut RunSummary) -> Result<()> {
    let f = cfg.finetune.as_ref().ok_or_else(|| Error::config("finetune", "missing section"))?;
    let (train, val, _) = load_splits(cfg, f.task)?;
    let val = if val.is_empty() { train.clone() } else { val };
    let run = FinetuneRun {
        task: f.task,
        init: f.init.clone(),
        spec: cfg.model.resolve()?,
        hyper: cfg.hyper.clone(),
        augment: cfg.augment.clone(),
        train,
        val,
        eval_crop: f.eval_crop.or(Some(cfg.augment.crop_size)),
        out_dir: Some(out.to_path_buf()),
    };
    let res = finetune(&run)?;
    summary.artifacts.extend(res.checkpoint_paths.iter().cloned());
    let plot = out.join("convergence.svg");
    emit_convergence_plot(std::slice::from_ref(&res.series), &plot)?;
    summary.artifacts.push(plot);
    summary.message = format!(
        "fine-tuned {} on {} ({}): val {} {:.5} -> {:.5}",
        run.spec.name,
        run.task,
        res.provenance,
        res.series.kind,
        res.series.initial.unwrap_or(f64::NAN),
        res.series.last().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn run_evaluate(cfg: &ExperimentConfig, out: &Path, summary: &mut RunSummary) -> Result<()> {
    let e = cfg.evaluate.as_ref().ok_or_else(|| Error::config("evaluate", "missing section"))?;
    let kind = metric_for(e.task)?;
    let (_, val, test) = load_splits(cfg, e.task)?;
    let test = if test.is_empty() { val } else { test };
    let test = materialize(&test)?;
    let files = ckpt_files(&e.checkpoints)?;
    let mut groups: BTreeMap<(String, String), Vec<PathBuf>> = BTreeMap::new();
    for p in &files {
        let rec = CheckpointRecord::load(p).map_err(|err| err.context(format!("checkpoint {}", p.display())))?;
        if rec.meta.task != e.task {
            continue;
        }
        groups
            .entry((rec.meta.spec.name.clone(), rec.meta.provenance.clone()))
            .or_default()
            .push(p.clone());
    }
    if groups.is_empty() {
        return Err(Error::Data(format!("no {} checkpoints among {} files", e.task, files.len())));
    }
    let opts = EvalOptions {
        batch_size: e.batch_size,
        crop: e.crop,
        ..EvalOptions::default()
    };
    let mut table: Option<MetricTable> = None;
    for paths in groups.values() {
        let row = evaluate_checkpoints(paths, &test, kind, &opts)?;
        let t = table.get_or_insert_with(|| MetricTable::new(kind, row.cells.iter().map(|c| c.0).collect()));
        t.push_row(&row.spec, &row.init, &row.cells)?;
    }
    let table = table.expect("at least one group");
    let csv = out.join("metric_table.csv");
    emit_table(&table, &csv, TableFormat::Csv)?;
    summary.artifacts.push(csv);
    if e.format == TableFormat::Markdown {
        let md = out.join("metric_table.md");
        emit_table(&table, &md, TableFormat::Markdown)?;
        summary.artifacts.push(md);
    }
    summary.message = format!(
        "evaluated {} rows x {} checkpoint epochs ({})",
        table.rows.len(),
        table.epochs.len(),
        table.metric
    );
    Ok(())
}

/// Executes `cfg`, writing every artifact (and the effective config) under
/// `out`.
pub fn run(cfg: &ExperimentConfig, out: &Path) -> Result<RunSummary> {
    cfg.validate()?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let eff = out.join(EFFECTIVE_CONFIG);
    write_atomic(&eff, cfg.effective_toml()?.as_bytes())?;
    let mut summary = RunSummary {
        artifacts: vec![eff],
        message: String::new(),
    };
    info!("{} run writing to {}", cfg.kind.name(), out.display());
    let ctx = cfg.kind.name();
    match cfg.kind {
        RunKind::Pretrain => run_pretrain(cfg, out, &mut summary),
        RunKind::Finetune => run_finetune(cfg, out, &mut summary),
        RunKind::Evaluate => run_evaluate(cfg, out, &mut summary),
        RunKind::SynthData => {
            let corpus = synth_corpus(&cfg.synth.params, cfg.seed)?;
            let root = out.join("data");
            corpus.write_layout(&root, &cfg.synth.split)?;
            summary.artifacts.push(root.join("manifest.toml"));
            summary.message = format!(
                "wrote {} samples per task under {}",
                corpus.len(),
                root.display()
            );
            Ok(())
        }
        RunKind::RfReport => {
            let rows = rf_report(&cfg.rf_report.specs)?;
            let p = out.join("rf_report.csv");
            write_atomic(&p, rf_report_csv(&rows).as_bytes())?;
            summary.artifacts.push(p);
            summary.message = rf_report_csv(&rows);
            Ok(())
        }
    }
    .map_err(|e| e.context(ctx))?;
    Ok(summary)
}
