//! Configuration, checkpoint persistence and run orchestration.

pub mod checkpoint;
pub mod config;
pub mod run;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta, CheckpointRecord};
pub use config::{ExperimentConfig, RunKind};
pub use run::{load_splits, rf_report, rf_report_csv, run, RfRow, RunSummary};
