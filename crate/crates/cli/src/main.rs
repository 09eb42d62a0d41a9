use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use emss_core::experiment::{rf_report, rf_report_csv, run, ExperimentConfig, RunKind};

/// Self-supervised pretraining and fine-tuning for electron microscopy images.
#[derive(Parser, Debug)]
#[command(name = "emss", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Adversarial pretext pretraining.
    Pretrain(RunArgs),
    /// Supervised fine-tuning from random or pretrained weights.
    Finetune(RunArgs),
    /// Evaluate saved checkpoints into a metric table.
    Evaluate(RunArgs),
    /// Write a synthetic dataset in the directory layout.
    SynthData(RunArgs),
    /// Analytic and measured receptive fields of the U-Net presets.
    RfReport {
        /// Report only this preset (repeatable).
        #[arg(long = "spec")]
        specs: Vec<String>,
        /// Also write rf_report.csv and the effective config here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct RunArgs {
    /// TOML experiment configuration.
    #[arg(short = 'c', long = "config")]
    config: PathBuf,
    /// Output directory; overrides `out_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run_config(kind: RunKind, args: &RunArgs) -> Result<()> {
    let cfg = ExperimentConfig::load(&args.config)?;
    if cfg.kind != kind {
        bail!(
            "{} is a `{}` config, not `{}`",
            args.config.display(),
            cfg.kind.name(),
            kind.name()
        );
    }
    let out = args
        .out
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .context("no output directory: pass --out or set out_dir in the config")?;
    let summary = run(&cfg, &out)?;
    println!("{}", summary.message.trim_end());
    for a in &summary.artifacts {
        log::info!("wrote {}", a.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    if std::env::var("EMSS_DETERMINISTIC").is_ok_and(|v| v == "1") {
        // A single worker thread fixes the floating-point reduction order.
        std::env::set_var("RAYON_NUM_THREADS", "1");
    }
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::Pretrain(a) => run_config(RunKind::Pretrain, a),
        Command::Finetune(a) => run_config(RunKind::Finetune, a),
        Command::Evaluate(a) => run_config(RunKind::Evaluate, a),
        Command::SynthData(a) => run_config(RunKind::SynthData, a),
        Command::RfReport { specs, out: None } => {
            rf_report(specs).map(|rows| print!("{}", rf_report_csv(&rows))).map_err(Into::into)
        }
        Command::RfReport { specs, out: Some(out) } => {
            let toml = format!("kind = \"rf-report\"\n[rf_report]\nspecs = {specs:?}\n");
            ExperimentConfig::from_toml_str(&toml)
                .and_then(|cfg| run(&cfg, out))
                .map(|s| print!("{}", s.message))
                .map_err(Into::into)
        }
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
