//! Monte-Carlo MSE grids over `(d, n, σ²)` for the trained model and OLS.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::{ols_fit, ols_predict};
use crate::error::{Error, Result};
use crate::model::DeepOSetsModel;
use crate::rng::derive_seed;
use crate::taskgen::{sample_task, NoiseScale, TaskDistribution, TaskSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    DeepOSets,
    Ols,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::DeepOSets => "deeposets",
            Method::Ols => "ols",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "deeposets" => Ok(Method::DeepOSets),
            "ols" => Ok(Method::Ols),
            other => Err(Error::Config(format!("unknown method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalGrid {
    /// Trained model to evaluate; `None` evaluates OLS only.
    pub checkpoint: Option<PathBuf>,
    pub dims: Vec<usize>,
    pub ns: Vec<usize>,
    pub noise: Vec<f64>,
    #[serde(default)]
    pub noise_scale: NoiseScale,
    pub tasks_per_cell: usize,
    pub queries_per_task: usize,
    pub seed: u64,
    #[serde(default = "one")]
    pub threads: usize,
}

fn one() -> usize {
    1
}

impl EvalGrid {
    /// 2,000 tasks × 16 queries per cell.
    pub fn new(dims: Vec<usize>, ns: Vec<usize>, noise: Vec<f64>) -> Self {
        Self {
            checkpoint: None,
            dims,
            ns,
            noise,
            noise_scale: NoiseScale::Variance,
            tasks_per_cell: 2000,
            queries_per_task: 16,
            seed: 0,
            threads: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.dims.is_empty() || self.ns.is_empty() || self.noise.is_empty() {
            return bad("grid needs at least one d, one n and one noise level");
        }
        if self.dims.contains(&0) {
            return bad("d must be ≥ 1");
        }
        if self.ns.contains(&0) {
            return bad("n must be ≥ 1 in every cell");
        }
        if self.noise.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return bad("noise levels must be finite and ≥ 0");
        }
        if self.tasks_per_cell < 2 {
            return bad("tasks_per_cell must be ≥ 2 for a standard error");
        }
        if self.queries_per_task == 0 {
            return bad("queries_per_task must be ≥ 1");
        }
        if self.threads == 0 {
            return bad("threads must be ≥ 1");
        }
        Ok(())
    }

    pub fn cells(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.dims.len() * self.ns.len() * self.noise.len());
        for &d in &self.dims {
            for &n in &self.ns {
                for &s in &self.noise {
                    out.push((d, n, s));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub method: Method,
    pub d: usize,
    pub n: usize,
    pub noise: f64,
    pub mean_mse: f64,
    pub std_error: f64,
    pub tasks: usize,
}

/// Seed of the task stream for one grid cell. Every cell gets its own stream,
/// so cells never share draws and can be evaluated in any order.
pub fn cell_seed(seed: u64, d: usize, n: usize, noise: f64) -> u64 {
    let s = derive_seed(seed, d as u64);
    let s = derive_seed(s, n as u64);
    derive_seed(s, noise.to_bits())
}

/// Mean and standard error of per-task MSEs.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let k = values.len();
    if k == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / k as f64;
    if k < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (k - 1) as f64;
    (mean, (var / k as f64).sqrt())
}

fn task_ols_mse(task: &TaskSample) -> Result<f64> {
    let fit = ols_fit(&task.prompt);
    let mut acc = 0.0;
    for j in 0..task.query_count() {
        let r = ols_predict(&fit, task.query(j))? - task.targets[j];
        acc += r * r;
    }
    Ok(acc / task.query_count() as f64)
}

fn task_model_mse(model: &DeepOSetsModel, task: &TaskSample) -> Result<f64> {
    let cache = model.cache(&task.prompt)?;
    let preds = model.predict_batch(&cache, &task.queries)?;
    Ok(crate::trainer::mean_squared_error(&preds, &task.targets))
}

/// Per-task MSEs of one cell, in task-index order.
pub fn cell_task_mses(
    model: Option<&DeepOSetsModel>,
    dist: &TaskDistribution,
    tasks: usize,
) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
    let mut ols = Vec::with_capacity(tasks);
    let mut net = model.map(|_| Vec::with_capacity(tasks));
    for i in 0..tasks as u64 {
        let task = sample_task(dist, i)?;
        ols.push(task_ols_mse(&task)?);
        if let (Some(m), Some(v)) = (model, net.as_mut()) {
            v.push(task_model_mse(m, &task)?);
        }
    }
    Ok((ols, net))
}

/// Evaluates one cell. Both methods see the same noisy prompts.
pub fn evaluate_cell(
    grid: &EvalGrid,
    model: Option<&DeepOSetsModel>,
    d: usize,
    n: usize,
    noise: f64,
) -> Result<Vec<CellResult>> {
    let mut dist = TaskDistribution::new(
        d,
        n,
        noise,
        grid.queries_per_task,
        cell_seed(grid.seed, d, n, noise),
    );
    dist.noise_scale = grid.noise_scale;
    dist.validate()?;
    let (ols, net) = cell_task_mses(model, &dist, grid.tasks_per_cell)?;
    let row = |method, v: &[f64]| {
        let (mean_mse, std_error) = mean_and_se(v);
        CellResult {
            method,
            d,
            n,
            noise,
            mean_mse,
            std_error,
            tasks: v.len(),
        }
    };
    let mut out = Vec::with_capacity(2);
    if let Some(v) = net {
        out.push(row(Method::DeepOSets, &v));
    }
    out.push(row(Method::Ols, &ols));
    Ok(out)
}

/// Evaluates every cell of `grid`. With a model, every `d` in the grid must
/// equal the model's input dimension.
pub fn evaluate_grid(grid: &EvalGrid, model: Option<&DeepOSetsModel>) -> Result<Vec<CellResult>> {
    grid.validate()?;
    if let Some(m) = model {
        if let Some(&d) = grid.dims.iter().find(|&&d| d != m.input_dim()) {
            return Err(Error::Config(format!(
                "grid dimension {d} does not match the model input dimension {}",
                m.input_dim()
            )));
        }
    }
    let cells = grid.cells();
    let eval = |&(d, n, s): &(usize, usize, f64)| evaluate_cell(grid, model, d, n, s);
    let results: Vec<Vec<CellResult>> = if grid.threads > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(grid.threads)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?;
        pool.install(|| cells.par_iter().map(eval).collect::<Result<_>>())?
    } else {
        cells.iter().map(eval).collect::<Result<_>>()?
    };
    Ok(results.into_iter().flatten().collect())
}
