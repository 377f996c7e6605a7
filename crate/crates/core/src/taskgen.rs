//! Synthetic linear-regression tasks.
//!
//! A task draws weights `a ~ N(0, I_d)`, prompt inputs `x_i ~ N(0, I_d)` and
//! query inputs from the same law. Prompt labels are `aᵀx_i + ε_i`; query
//! targets are always noiseless. Task `i` is generated from its own stream, so
//! `sample_task(dist, i)` does not depend on any other task.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Prompt;
use crate::rng::GaussianStream;

/// How the configured noise level is interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseScale {
    /// The level is the noise variance σ².
    #[default]
    Variance,
    /// The level is the noise standard deviation σ.
    Std,
}

/// Number of prompt examples per task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ExampleCount {
    Fixed(usize),
    Range { min: usize, max: usize },
}

impl ExampleCount {
    pub fn min(&self) -> usize {
        match *self {
            ExampleCount::Fixed(n) => n,
            ExampleCount::Range { min, .. } => min,
        }
    }

    pub fn max(&self) -> usize {
        match *self {
            ExampleCount::Fixed(n) => n,
            ExampleCount::Range { max, .. } => max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskDistribution {
    pub dim: usize,
    pub examples: ExampleCount,
    pub noise: f64,
    #[serde(default)]
    pub noise_scale: NoiseScale,
    pub queries: usize,
    pub seed: u64,
}

impl TaskDistribution {
    pub fn new(dim: usize, n: usize, noise_var: f64, queries: usize, seed: u64) -> Self {
        Self {
            dim,
            examples: ExampleCount::Fixed(n),
            noise: noise_var,
            noise_scale: NoiseScale::Variance,
            queries,
            seed,
        }
    }

    pub fn noise_std(&self) -> f64 {
        match self.noise_scale {
            NoiseScale::Variance => self.noise.sqrt(),
            NoiseScale::Std => self.noise,
        }
    }

    pub fn noise_variance(&self) -> f64 {
        match self.noise_scale {
            NoiseScale::Variance => self.noise,
            NoiseScale::Std => self.noise * self.noise,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidDistribution("d must be ≥ 1".into()));
        }
        if self.examples.min() == 0 || self.examples.min() > self.examples.max() {
            return Err(Error::InvalidDistribution(format!(
                "invalid example count {:?}",
                self.examples
            )));
        }
        if !self.noise.is_finite() || self.noise < 0.0 {
            return Err(Error::InvalidDistribution(format!(
                "noise level must be finite and ≥ 0, got {}",
                self.noise
            )));
        }
        Ok(())
    }
}

/// One sampled linear function with its prompt and held-out queries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSample {
    pub index: u64,
    pub weights: Vec<f64>,
    /// Prompt as presented to a model (noisy labels if noise > 0).
    pub prompt: Prompt,
    /// Noiseless labels `aᵀx_i` for the prompt inputs.
    pub clean_labels: Vec<f64>,
    /// Query inputs, row-major `m × d`.
    pub queries: Vec<f64>,
    /// Noiseless targets `aᵀx_q`.
    pub targets: Vec<f64>,
}

impl TaskSample {
    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn query(&self, j: usize) -> &[f64] {
        let d = self.dim();
        &self.queries[j * d..(j + 1) * d]
    }

    pub fn query_count(&self) -> usize {
        self.targets.len()
    }

    /// Prompt with the noiseless labels.
    pub fn clean_prompt(&self) -> Prompt {
        Prompt::new(
            self.dim(),
            self.prompt.xs().to_vec(),
            self.clean_labels.clone(),
        )
        .expect("sampled prompt is well-formed")
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

/// Draws task `index` of `dist`. Pure in `(dist, index)`.
///
/// Draw order within the task stream: example count (if ranged), `a`, prompt
/// inputs, noise variates, query inputs. Noise variates are drawn even when the
/// noise level is zero so inputs do not depend on the noise level.
pub fn sample_task(dist: &TaskDistribution, index: u64) -> Result<TaskSample> {
    dist.validate()?;
    let d = dist.dim;
    let mut s = GaussianStream::with_stream(dist.seed, index);
    let n = match dist.examples {
        ExampleCount::Fixed(n) => n,
        ExampleCount::Range { min, max } => s.next_index(min, max),
    };
    let weights = s.normals(d);
    let xs = s.normals(n * d);
    let clean_labels: Vec<f64> = xs.chunks_exact(d).map(|x| dot(&weights, x)).collect();
    let sigma = dist.noise_std();
    let ys: Vec<f64> = clean_labels
        .iter()
        .map(|&y| {
            let eps = s.next_normal();
            if sigma > 0.0 {
                y + sigma * eps
            } else {
                y
            }
        })
        .collect();
    let queries = s.normals(dist.queries * d);
    let targets = queries.chunks_exact(d).map(|x| dot(&weights, x)).collect();
    Ok(TaskSample {
        index,
        weights,
        prompt: Prompt::new(d, xs, ys)?,
        clean_labels,
        queries,
        targets,
    })
}

/// `count` consecutive tasks starting at index `start`.
pub fn sample_batch(dist: &TaskDistribution, start: u64, count: usize) -> Result<Vec<TaskSample>> {
    (0..count as u64)
        .map(|k| sample_task(dist, start + k))
        .collect()
}

/// Sequential cursor over a distribution's task indices.
#[derive(Debug, Clone)]
pub struct TaskStream {
    dist: TaskDistribution,
    next: u64,
}

impl TaskStream {
    pub fn new(dist: TaskDistribution) -> Result<Self> {
        dist.validate()?;
        Ok(Self { dist, next: 0 })
    }

    pub fn at(dist: TaskDistribution, index: u64) -> Result<Self> {
        dist.validate()?;
        Ok(Self { dist, next: index })
    }

    pub fn position(&self) -> u64 {
        self.next
    }

    pub fn next_task(&mut self) -> Result<TaskSample> {
        let t = sample_task(&self.dist, self.next)?;
        self.next += 1;
        Ok(t)
    }

    pub fn next_batch(&mut self, count: usize) -> Result<Vec<TaskSample>> {
        let b = sample_batch(&self.dist, self.next, count)?;
        self.next += count as u64;
        Ok(b)
    }
}

/// One line of a task dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub seed: u64,
    pub index: u64,
    pub d: usize,
    pub n: usize,
    pub noise_var: f64,
    pub a: Vec<f64>,
    pub xs: Vec<Vec<f64>>,
    pub ys: Vec<f64>,
    pub queries: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
}

impl TaskRecord {
    pub fn from_task(dist: &TaskDistribution, task: &TaskSample) -> Self {
        let d = task.dim();
        Self {
            seed: dist.seed,
            index: task.index,
            d,
            n: task.prompt.len(),
            noise_var: dist.noise_variance(),
            a: task.weights.clone(),
            xs: task
                .prompt
                .xs()
                .chunks_exact(d)
                .map(<[f64]>::to_vec)
                .collect(),
            ys: task.prompt.ys().to_vec(),
            queries: task.queries.chunks_exact(d).map(<[f64]>::to_vec).collect(),
            targets: task.targets.clone(),
        }
    }
}

/// Writes one JSON object per task per line.
pub fn write_task_dump<W: Write>(
    mut out: W,
    dist: &TaskDistribution,
    tasks: &[TaskSample],
) -> Result<()> {
    for t in tasks {
        serde_json::to_writer(&mut out, &TaskRecord::from_task(dist, t))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_task_dump<R: BufRead>(input: R) -> Result<Vec<TaskRecord>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TaskRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: "<task dump>".into(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}
