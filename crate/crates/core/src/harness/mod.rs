//! Experiment orchestration: synthetic sweeps, single CSV runs, metrics and
//! exports.

pub mod config;
pub mod metrics;
pub mod records;
pub mod single;
pub mod sweep;

pub use config::{SweepFile, OUTPUT_DIR_ENV};
pub use metrics::{evaluate, evaluate_records, evaluate_reports, MetricsReport, Prediction, SweepEvaluation, ValidityCells};
pub use records::{ExportFormat, RunRecord, SweepSummary};
pub use single::{run_single, run_single_pair, SingleConfig, SingleOutput};
pub use sweep::{run_sweep, summarize, Scale, SweepConfig, SweepOutput};

use std::path::Path;

use crate::Result;

/// Writes `runs.csv`, `summary.csv`, `summary.json` and `config.json` into
/// `dir`.
pub fn write_sweep_outputs(output: &SweepOutput, config: &SweepConfig, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    records::save_runs_csv(&output.records, dir.join("runs.csv"))?;
    records::export_summary(&output.summary, ExportFormat::Csv, dir.join("summary.csv"))?;
    records::export_summary(&output.summary, ExportFormat::Json, dir.join("summary.json"))?;
    std::fs::write(dir.join("config.json"), serde_json::to_string_pretty(config)? + "\n")?;
    Ok(())
}
