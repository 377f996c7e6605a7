//! Evaluation grids, latency measurements and their reports and figures.

pub mod eval;
pub mod latency;
pub mod plot;
pub mod report;

pub use eval::{
    cell_seed, evaluate_cell, evaluate_grid, mean_and_se, CellResult, EvalGrid, Method,
};
pub use latency::{
    run_latency_bench, theil_sen, LatencyConfig, LatencyReport, LatencyRow, MachineInfo,
    TimingStats,
};
pub use report::{
    compare_noise_robustness, literature_rows, ExperimentReport, LiteratureRow, NoiseRobustness,
    ReportMeta, RobustnessFlag,
};

use std::path::Path;

use crate::checkpoint::{file_hash, load_checkpoint};
use crate::error::{Error, Result};

/// Loads the grid's checkpoint (if any), evaluates every cell and wraps the
/// result with provenance metadata.
pub fn run_eval_grid(grid: &EvalGrid) -> Result<ExperimentReport> {
    grid.validate()?;
    let mut meta = ReportMeta::new(grid.seed, serde_json::to_value(grid)?);
    let model = match &grid.checkpoint {
        Some(path) => {
            let (model, _) = load_checkpoint(path).map_err(|e| missing(path, e))?;
            meta.checkpoint = Some(path.display().to_string());
            meta.checkpoint_sha256 = Some(file_hash(path)?);
            Some(model)
        }
        None => None,
    };
    let cells = evaluate_grid(grid, model.as_ref())?;
    Ok(ExperimentReport::new(meta, cells))
}

fn missing(path: &Path, e: Error) -> Error {
    match e {
        Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => {
            Error::Config(format!("checkpoint {} not found", path.display()))
        }
        other => other,
    }
}
