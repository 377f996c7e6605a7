//! Experiment reports, literature reference rows and the noise-robustness
//! summary.

use std::io::Write;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::eval::{CellResult, Method};
use crate::error::{Error, Result};

/// How per-cell MSE values are defined; echoed into every report.
pub const MSE_DEFINITION: &str =
    "per task: mean over query points of (prediction - noiseless target)^2; \
per cell: mean over tasks, standard error = sample std of per-task MSEs / sqrt(tasks)";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub tool: String,
    pub version: String,
    pub created_unix: u64,
    pub seed: u64,
    pub checkpoint: Option<String>,
    pub checkpoint_sha256: Option<String>,
    pub mse_definition: String,
    /// Fully resolved configuration that produced the report.
    pub config: serde_json::Value,
}

impl ReportMeta {
    pub fn new(seed: u64, config: serde_json::Value) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            created_unix: unix_now(),
            seed,
            checkpoint: None,
            checkpoint_sha256: None,
            mse_definition: MSE_DEFINITION.to_string(),
            config,
        }
    }
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// A published number quoted for comparison; never produced by this tool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiteratureRow {
    pub method: String,
    pub d: usize,
    pub n: usize,
    pub noise: f64,
    pub mse: f64,
    pub measured: bool,
    pub note: String,
}

const TRANSFORMER_MSE: [(usize, f64, f64); 8] = [
    (1, 0.0, 4.74e-4),
    (1, 0.04, 6.80e-3),
    (1, 0.2, 0.132),
    (1, 2.0, 6.91),
    (5, 0.0, 3.46e-3),
    (5, 0.04, 1.02e-2),
    (5, 0.2, 8.81e-2),
    (5, 2.0, 5.17),
];

const PUBLISHED_DEEPOSETS_MSE: [(usize, f64, f64); 8] = [
    (1, 0.0, 1.73e-4),
    (1, 0.04, 6.06e-4),
    (1, 0.2, 1.12e-2),
    (1, 2.0, 0.458),
    (5, 0.0, 0.754),
    (5, 0.04, 0.836),
    (5, 0.2, 0.812),
    (5, 2.0, 2.75),
];

const PUBLISHED_OLS_MSE: [(usize, f64, f64); 8] = [
    (1, 0.0, 1.16e-14),
    (1, 0.04, 1.91e-4),
    (1, 0.2, 4.77e-3),
    (1, 2.0, 0.477),
    (5, 0.0, 1.16e-12),
    (5, 0.04, 2.05e-3),
    (5, 0.2, 5.36e-2),
    (5, 2.0, 5.37),
];

/// Published n=10 reference values, all marked not-measured.
pub fn literature_rows() -> Vec<LiteratureRow> {
    let mut rows = Vec::new();
    for (method, table) in [
        ("transformer", &TRANSFORMER_MSE),
        ("deeposets (published)", &PUBLISHED_DEEPOSETS_MSE),
        ("ols (published)", &PUBLISHED_OLS_MSE),
    ] {
        for &(d, noise, mse) in table.iter() {
            rows.push(LiteratureRow {
                method: method.to_string(),
                d,
                n: 10,
                noise,
                mse,
                measured: false,
                note: "literature reference, not measured".to_string(),
            });
        }
    }
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub meta: ReportMeta,
    pub cells: Vec<CellResult>,
    pub literature: Vec<LiteratureRow>,
}

impl ExperimentReport {
    pub fn new(meta: ReportMeta, cells: Vec<CellResult>) -> Self {
        Self {
            meta,
            cells,
            literature: literature_rows(),
        }
    }

    pub fn cell(&self, method: Method, d: usize, n: usize, noise: f64) -> Option<&CellResult> {
        self.cells
            .iter()
            .find(|c| c.method == method && c.d == d && c.n == n && c.noise == noise)
    }

    pub fn methods(&self) -> Vec<Method> {
        let mut m: Vec<Method> = self.cells.iter().map(|c| c.method).collect();
        m.sort();
        m.dedup();
        m
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    /// Measured cells first, then literature rows with `measured=false`.
    /// Metadata goes into leading `#` lines.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let meta = serde_json::to_string(&self.meta)?;
        writeln!(out, "# {meta}")?;
        writeln!(out, "method,d,n,noise,mean_mse,std_error,tasks,measured")?;
        for c in &self.cells {
            writeln!(
                out,
                "{},{},{},{},{:e},{:e},{},true",
                c.method, c.d, c.n, c.noise, c.mean_mse, c.std_error, c.tasks
            )?;
        }
        for r in &self.literature {
            writeln!(
                out,
                "{},{},{},{},{:e},,,false",
                r.method, r.d, r.n, r.noise, r.mse
            )?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RobustnessFlag {
    DeepOSetsLessSensitive,
    OlsLessSensitive,
    Neutral,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub noise: f64,
    pub deeposets_ratio: f64,
    pub ols_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseRobustness {
    pub d: usize,
    pub n: usize,
    /// Reference level: the smallest positive noise level in the report.
    pub base_noise: f64,
    pub rows: Vec<RatioRow>,
    pub flag: RobustnessFlag,
}

/// Ratios `MSE(σ²) / MSE(σ²_base)` per method at fixed `(d, n)`, and whether
/// the model's ratio at the highest level is below OLS'. Zero-noise cells are
/// ignored because the OLS error there is at round-off level.
pub fn compare_noise_robustness(
    report: &ExperimentReport,
    d: usize,
    n: usize,
) -> Result<NoiseRobustness> {
    let mut levels: Vec<f64> = report
        .cells
        .iter()
        .filter(|c| c.d == d && c.n == n && c.noise > 0.0)
        .map(|c| c.noise)
        .collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let complete: Vec<f64> = levels
        .into_iter()
        .filter(|&s| {
            report.cell(Method::DeepOSets, d, n, s).is_some()
                && report.cell(Method::Ols, d, n, s).is_some()
        })
        .collect();
    if complete.len() < 3 {
        return Err(Error::Bench(format!(
            "noise comparison at d={d}, n={n} needs both methods at ≥ 3 positive noise levels, found {}",
            complete.len()
        )));
    }
    let base = complete[0];
    let mse = |m, s| {
        report
            .cell(m, d, n, s)
            .map(|c| c.mean_mse)
            .unwrap_or(f64::NAN)
    };
    let rows: Vec<RatioRow> = complete
        .iter()
        .map(|&s| RatioRow {
            noise: s,
            deeposets_ratio: mse(Method::DeepOSets, s) / mse(Method::DeepOSets, base),
            ols_ratio: mse(Method::Ols, s) / mse(Method::Ols, base),
        })
        .collect();
    let last = rows.last().expect("at least three rows");
    Ok(NoiseRobustness {
        d,
        n,
        base_noise: base,
        flag: ratio_flag(last.deeposets_ratio, last.ols_ratio),
        rows,
    })
}

pub fn ratio_flag(deeposets: f64, ols: f64) -> RobustnessFlag {
    let tol = 1e-12 * deeposets.abs().max(ols.abs());
    if (deeposets - ols).abs() <= tol {
        RobustnessFlag::Neutral
    } else if deeposets < ols {
        RobustnessFlag::DeepOSetsLessSensitive
    } else {
        RobustnessFlag::OlsLessSensitive
    }
}
