//! Run configuration: a TOML file with optional `[train]`, `[eval]` and
//! `[bench]` tables. Every field is optional; command-line flags are laid over
//! the file and the remaining gaps take built-in defaults.
//!
//! ```toml
//! [train]
//! preset = "d1"
//! iterations = 16000
//! seed = 7
//!
//! [eval]
//! ns = [5, 10, 20]
//! noise = [0.0, 0.2, 2.0]
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bench::{EvalGrid, LatencyConfig};
use crate::error::{Error, Result};
use crate::model::Preset;
use crate::nn::AdamConfig;
use crate::taskgen::{NoiseScale, TaskDistribution};
use crate::trainer::TrainConfig;

macro_rules! overlay {
    ($base:ident, $top:ident; $($field:ident),* $(,)?) => {
        $( if $top.$field.is_some() { $base.$field = $top.$field.clone(); } )*
    };
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub preset: Option<Preset>,
    pub iterations: Option<u64>,
    pub batch_size: Option<usize>,
    pub queries: Option<usize>,
    pub examples: Option<usize>,
    pub train_noise: Option<f64>,
    pub noise_param: Option<NoiseScale>,
    pub seed: Option<u64>,
    pub checkpoint_every: Option<u64>,
    pub log_every: Option<u64>,
    pub threads: Option<usize>,
    pub learning_rate: Option<f64>,
    pub decay_rate: Option<f64>,
    pub decay_steps: Option<u64>,
}

impl TrainSettings {
    pub fn overlay(mut self, top: &TrainSettings) -> Self {
        overlay!(self, top; preset, iterations, batch_size, queries, examples, train_noise,
            noise_param, seed, checkpoint_every, log_every, threads, learning_rate, decay_rate, decay_steps);
        self
    }

    pub fn resolve(&self) -> Result<TrainConfig> {
        let preset = self.preset.unwrap_or(Preset::D1);
        let seed = self.seed.unwrap_or(0);
        let mut cfg = TrainConfig::preset(preset, seed);
        let mut tasks = TaskDistribution::new(
            preset.input_dim(),
            self.examples.unwrap_or(preset.train_examples()),
            self.train_noise.unwrap_or(0.0),
            self.queries.unwrap_or(cfg.tasks.queries),
            seed,
        );
        tasks.noise_scale = self.noise_param.unwrap_or_default();
        cfg.tasks = tasks;
        cfg.iterations = self.iterations.unwrap_or(cfg.iterations);
        cfg.batch_size = self.batch_size.unwrap_or(cfg.batch_size);
        cfg.checkpoint_every = self.checkpoint_every.unwrap_or(cfg.checkpoint_every);
        cfg.log_every = self.log_every.unwrap_or(cfg.log_every);
        cfg.threads = self.threads.unwrap_or(cfg.threads);
        let d = AdamConfig::default();
        cfg.adam = AdamConfig {
            learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
            decay_rate: self.decay_rate.unwrap_or(d.decay_rate),
            decay_steps: self.decay_steps.unwrap_or(d.decay_steps),
            ..d
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub checkpoint: Option<PathBuf>,
    pub ols_only: Option<bool>,
    pub dims: Option<Vec<usize>>,
    pub ns: Option<Vec<usize>>,
    pub noise: Option<Vec<f64>>,
    pub noise_param: Option<NoiseScale>,
    pub tasks: Option<usize>,
    pub queries: Option<usize>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub plots: Option<bool>,
}

impl EvalSettings {
    pub fn overlay(mut self, top: &EvalSettings) -> Self {
        overlay!(self, top; checkpoint, ols_only, dims, ns, noise, noise_param, tasks, queries,
            seed, threads, plots);
        self
    }

    /// Grid with `dims` defaulting to the checkpoint model's dimension.
    pub fn resolve(&self, model_dim: Option<usize>) -> Result<EvalGrid> {
        let dims = match (&self.dims, model_dim) {
            (Some(d), _) => d.clone(),
            (None, Some(d)) => vec![d],
            (None, None) => vec![1],
        };
        let mut grid = EvalGrid::new(
            dims,
            self.ns.clone().unwrap_or_else(|| vec![10]),
            self.noise
                .clone()
                .unwrap_or_else(|| vec![0.0, 0.04, 0.2, 2.0]),
        );
        if !self.ols_only.unwrap_or(false) {
            grid.checkpoint = self.checkpoint.clone();
        }
        grid.noise_scale = self.noise_param.unwrap_or_default();
        grid.tasks_per_cell = self.tasks.unwrap_or(grid.tasks_per_cell);
        grid.queries_per_task = self.queries.unwrap_or(grid.queries_per_task);
        grid.seed = self.seed.unwrap_or(0);
        grid.threads = self.threads.unwrap_or(1);
        grid.validate()?;
        Ok(grid)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSettings {
    pub checkpoint: Option<PathBuf>,
    pub ns: Option<Vec<usize>>,
    pub repetitions: Option<usize>,
    pub seed: Option<u64>,
    pub min_sample_micros: Option<f64>,
}

impl BenchSettings {
    pub fn overlay(mut self, top: &BenchSettings) -> Self {
        overlay!(self, top; checkpoint, ns, repetitions, seed, min_sample_micros);
        self
    }

    pub fn resolve(&self) -> Result<LatencyConfig> {
        let mut cfg = LatencyConfig::new(
            self.ns.clone().unwrap_or_else(|| (1..=100).collect()),
            self.repetitions.unwrap_or(200),
        );
        cfg.seed = self.seed.unwrap_or(0);
        cfg.min_sample_micros = self.min_sample_micros.unwrap_or(cfg.min_sample_micros);
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train: TrainSettings,
    pub eval: EvalSettings,
    pub bench: BenchSettings,
}

impl RunConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
                .unwrap_or(1);
            Error::Parse {
                path: path.to_path_buf(),
                line,
                message: e.message().to_string(),
            }
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?, path)
    }

    /// `None` yields the all-defaults configuration.
    pub fn load_optional(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }
}

/// Parses `"1..100"` (inclusive), `"5"`, or comma-separated mixes such as
/// `"1,2,5..8"`.
pub fn parse_usize_list(s: &str) -> std::result::Result<Vec<usize>, String> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim) {
        if part.is_empty() {
            return Err(format!("empty entry in list `{s}`"));
        }
        if let Some((a, b)) = part.split_once("..") {
            let a: usize = a
                .trim()
                .parse()
                .map_err(|_| format!("invalid range start in `{part}`"))?;
            let b: usize = b
                .trim()
                .trim_start_matches('=')
                .parse()
                .map_err(|_| format!("invalid range end in `{part}`"))?;
            if a > b {
                return Err(format!("range `{part}` is empty"));
            }
            out.extend(a..=b);
        } else {
            out.push(
                part.parse()
                    .map_err(|_| format!("`{part}` is not a non-negative integer"))?,
            );
        }
    }
    Ok(out)
}

pub fn parse_f64_list(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split(',')
        .map(str::trim)
        .map(|p| {
            if p.is_empty() {
                return Err(format!("empty entry in list `{s}`"));
            }
            p.parse::<f64>()
                .map_err(|_| format!("`{p}` is not a number"))
        })
        .collect()
}
