//! Training loop: fresh synthetic tasks every iteration, quadratic loss on
//! noiseless query targets, Adam with staircase decay.
//!
//! Iteration `t` consumes task indices `t·B .. (t+1)·B` of the configured
//! distribution, so a run resumed from a checkpoint taken after iteration `t`
//! sees exactly the tasks the uninterrupted run would have seen.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{fmt_f64, save_checkpoint, CheckpointMeta};
use crate::error::{Error, Result};
use crate::model::{DeepOSetsModel, Episode, ModelConfig, ModelGrads, Preset};
use crate::nn::{AdamConfig, AdamState};
use crate::taskgen::{sample_batch, ExampleCount, TaskDistribution, TaskSample};

/// Query points per training task in the presets.
pub const PRESET_QUERIES: usize = 8;

/// Window of the moving average used as "smoothed training loss".
pub const SMOOTHING_WINDOW: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub tasks: TaskDistribution,
    pub iterations: u64,
    pub batch_size: usize,
    pub seed: u64,
    /// Save an intermediate checkpoint every this many iterations (0: never).
    pub checkpoint_every: u64,
    /// Emit a log row every this many iterations (0: never).
    pub log_every: u64,
    /// Worker count for gradient accumulation; 1 is strictly sequential.
    pub threads: usize,
    pub adam: AdamConfig,
}

impl TrainConfig {
    /// 16K iterations of 64 noiseless tasks with eight queries each. Extra
    /// queries share the task's branch pass, so they are cheap.
    pub fn preset(preset: Preset, seed: u64) -> Self {
        Self {
            model: preset.config(),
            tasks: TaskDistribution::new(
                preset.input_dim(),
                preset.train_examples(),
                0.0,
                PRESET_QUERIES,
                seed,
            ),
            iterations: 16_000,
            batch_size: 64,
            seed,
            checkpoint_every: 0,
            log_every: 100,
            threads: 1,
            adam: AdamConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.tasks.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be ≥ 1".into()));
        }
        if self.tasks.queries == 0 {
            return Err(Error::Config("queries per task must be ≥ 1".into()));
        }
        if self.tasks.dim != self.model.input_dim {
            return Err(Error::Config(format!(
                "task dimension {} differs from model input dimension {}",
                self.tasks.dim, self.model.input_dim
            )));
        }
        if self.threads == 0 {
            return Err(Error::Config("threads must be ≥ 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub iteration: u64,
    pub loss: f64,
    pub lr: f64,
    pub elapsed_seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
    /// Batch loss of every iteration run so far.
    pub losses: Vec<f64>,
}

impl TrainLog {
    /// Mean of the last `window` iteration losses.
    pub fn smoothed_loss(&self, window: usize) -> Option<f64> {
        self.moving_average(self.losses.len(), window)
    }

    /// Mean of the `window` losses ending at 1-based iteration `end`.
    pub fn moving_average(&self, end: usize, window: usize) -> Option<f64> {
        if window == 0 || end == 0 || end > self.losses.len() {
            return None;
        }
        let start = end.saturating_sub(window);
        let slice = &self.losses[start..end];
        Some(slice.iter().sum::<f64>() / slice.len() as f64)
    }

    pub fn write_csv<W: Write>(&self, mut out: W, comments: &[String]) -> Result<()> {
        for c in comments {
            for line in c.lines() {
                writeln!(out, "# {line}")?;
            }
        }
        writeln!(out, "iteration,loss,lr,elapsed_seconds")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{:.3}",
                r.iteration,
                fmt_f64(r.loss),
                fmt_f64(r.lr),
                r.elapsed_seconds
            )?;
        }
        Ok(())
    }
}

/// Mean over the task's queries of `(ŷ − target)²`.
pub fn loss(model: &DeepOSetsModel, task: &TaskSample) -> Result<f64> {
    let cache = model.cache(&task.prompt)?;
    let preds = model.predict_batch(&cache, &task.queries)?;
    Ok(mean_squared_error(&preds, &task.targets))
}

pub fn mean_squared_error(predictions: &[f64], targets: &[f64]) -> f64 {
    debug_assert_eq!(predictions.len(), targets.len());
    if targets.is_empty() {
        return 0.0;
    }
    predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / targets.len() as f64
}

/// Loss and parameter gradients for `tasks`, with each task's loss weighted by
/// `weight` (use `1/B` for a batch mean). Returns the weighted loss sum.
pub fn loss_and_gradients(
    model: &DeepOSetsModel,
    tasks: &[TaskSample],
    weight: f64,
) -> Result<(f64, ModelGrads)> {
    let mut grads = ModelGrads::zeros_for(model);
    if tasks.is_empty() {
        return Ok((0.0, grads));
    }
    let episodes: Vec<Episode<'_>> = tasks
        .iter()
        .map(|t| Episode {
            prompt: &t.prompt,
            queries: &t.queries,
        })
        .collect();
    let trace = model.forward_traced(&episodes)?;
    let preds = trace.predictions();
    let mut total = 0.0;
    let mut d_pred = Vec::with_capacity(preds.len());
    let mut offset = 0;
    for t in tasks {
        let m = t.targets.len();
        let scale = weight / m as f64;
        let mut task_loss = 0.0;
        for (p, y) in preds[offset..offset + m].iter().zip(&t.targets) {
            let r = p - y;
            task_loss += r * r;
            d_pred.push(2.0 * scale * r);
        }
        total += scale * task_loss;
        offset += m;
    }
    model.backward(&trace, &d_pred, &mut grads)?;
    Ok((total, grads))
}

pub struct Trainer {
    config: TrainConfig,
    model: DeepOSetsModel,
    optimizer: AdamState,
    log: TrainLog,
    started: Instant,
    pool: Option<rayon::ThreadPool>,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = DeepOSetsModel::init(config.model.clone(), config.seed)?;
        let optimizer = AdamState::new(&model, config.adam);
        Self::assemble(config, model, optimizer)
    }

    /// Continues a run from a saved model and optimizer state.
    pub fn resume(
        config: TrainConfig,
        model: DeepOSetsModel,
        optimizer: AdamState,
    ) -> Result<Self> {
        config.validate()?;
        if model.config() != &config.model {
            return Err(Error::Config(
                "checkpoint model differs from the configured model".into(),
            ));
        }
        Self::assemble(config, model, optimizer)
    }

    fn assemble(config: TrainConfig, model: DeepOSetsModel, optimizer: AdamState) -> Result<Self> {
        let pool = if config.threads > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(config.threads)
                    .build()
                    .map_err(|e| Error::Config(e.to_string()))?,
            )
        } else {
            None
        };
        Ok(Self {
            config,
            model,
            optimizer,
            log: TrainLog::default(),
            started: Instant::now(),
            pool,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn model(&self) -> &DeepOSetsModel {
        &self.model
    }

    pub fn optimizer(&self) -> &AdamState {
        &self.optimizer
    }

    pub fn log(&self) -> &TrainLog {
        &self.log
    }

    /// Completed optimizer steps.
    pub fn iteration(&self) -> u64 {
        self.optimizer.step
    }

    pub fn into_parts(self) -> (DeepOSetsModel, TrainLog) {
        (self.model, self.log)
    }

    fn batch(&self, iteration: u64) -> Result<Vec<TaskSample>> {
        let b = self.config.batch_size;
        sample_batch(&self.config.tasks, iteration * b as u64, b)
    }

    /// Runs one optimizer step; returns the batch loss it was computed on.
    pub fn step(&mut self) -> Result<f64> {
        let iteration = self.iteration();
        let tasks = self.batch(iteration)?;
        let weight = 1.0 / tasks.len() as f64;
        let workers = self.config.threads.min(tasks.len()).max(1);

        let (loss, grads) = if workers == 1 {
            loss_and_gradients(&self.model, &tasks, weight)?
        } else {
            let chunk = tasks.len().div_ceil(workers);
            let model = &self.model;
            let run = || {
                tasks
                    .par_chunks(chunk)
                    .map(|c| loss_and_gradients(model, c, weight))
                    .collect::<Result<Vec<_>>>()
            };
            let parts = match &self.pool {
                Some(pool) => pool.install(run)?,
                None => run()?,
            };
            let mut iter = parts.into_iter();
            let (mut loss, mut grads) = iter.next().expect("at least one chunk");
            for (l, g) in iter {
                loss += l;
                grads.merge(&g)?;
            }
            (loss, grads)
        };

        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                iteration: iteration as usize,
            });
        }
        let lr = self.optimizer.current_learning_rate();
        self.optimizer.step(&mut self.model, &grads)?;
        self.log.losses.push(loss);
        let done = self.iteration();
        if self.config.log_every > 0 && done.is_multiple_of(self.config.log_every) {
            self.log.rows.push(LogRow {
                iteration: done,
                loss,
                lr,
                elapsed_seconds: self.started.elapsed().as_secs_f64(),
            });
        }
        Ok(loss)
    }

    fn meta(&self) -> CheckpointMeta {
        CheckpointMeta {
            seed: self.config.seed,
            iterations: self.iteration(),
            final_loss: self.log.losses.last().copied(),
        }
    }

    /// Writes `<stem>.ckpt` and `<stem>.adam` into `dir`.
    pub fn save_state(&self, dir: &Path, stem: &str) -> Result<PathBuf> {
        let ckpt = dir.join(format!("{stem}.ckpt"));
        save_checkpoint(&self.model, &self.meta(), &ckpt)?;
        std::fs::write(
            dir.join(format!("{stem}.adam")),
            optimizer_to_string(&self.optimizer),
        )?;
        Ok(ckpt)
    }

    /// Runs until `config.iterations` steps are done. With `out_dir`, writes
    /// periodic checkpoints and, on a non-finite loss, a diagnostic checkpoint
    /// of the model just before the failing step.
    pub fn run(&mut self, out_dir: Option<&Path>) -> Result<()> {
        while self.iteration() < self.config.iterations {
            match self.step() {
                Ok(_) => {}
                Err(e @ Error::NonFiniteLoss { .. }) | Err(e @ Error::NonFiniteGradient { .. }) => {
                    if let Some(dir) = out_dir {
                        self.save_state(dir, "diagnostic")?;
                    }
                    return Err(e);
                }
                Err(e) => return Err(e),
            }
            let done = self.iteration();
            if let Some(dir) = out_dir {
                if self.config.checkpoint_every > 0
                    && done.is_multiple_of(self.config.checkpoint_every)
                    && done < self.config.iterations
                {
                    self.save_state(dir, &format!("checkpoint_{done:06}"))?;
                }
            }
        }
        Ok(())
    }
}

/// Builds a model and trains it for `config.iterations` steps in memory.
pub fn train(config: TrainConfig) -> Result<(DeepOSetsModel, TrainLog)> {
    let mut trainer = Trainer::new(config)?;
    trainer.run(None)?;
    Ok(trainer.into_parts())
}

impl TrainConfig {
    pub fn examples(&self) -> ExampleCount {
        self.tasks.examples
    }
}

const OPT_MAGIC: &str = "deeposets-optimizer";

pub fn optimizer_to_string(state: &AdamState) -> String {
    let mut out = String::new();
    let c = &state.config;
    let _ = writeln!(out, "{OPT_MAGIC}");
    let _ = writeln!(out, "format_version 1");
    let _ = writeln!(out, "step {}", state.step);
    let _ = writeln!(out, "learning_rate {}", fmt_f64(c.learning_rate));
    let _ = writeln!(out, "decay_rate {}", fmt_f64(c.decay_rate));
    let _ = writeln!(out, "decay_steps {}", c.decay_steps);
    let _ = writeln!(out, "beta1 {}", fmt_f64(c.beta1));
    let _ = writeln!(out, "beta2 {}", fmt_f64(c.beta2));
    let _ = writeln!(out, "epsilon {}", fmt_f64(c.epsilon));
    let (first, second) = state.moments();
    let _ = writeln!(out, "buffers {}", first.len());
    for (m, v) in first.iter().zip(second) {
        for (key, buf) in [("m", m), ("v", v)] {
            out.push_str(key);
            for &x in buf.iter() {
                out.push(' ');
                out.push_str(&fmt_f64(x));
            }
            out.push('\n');
        }
    }
    out.push_str("end\n");
    out
}

pub fn optimizer_from_str(text: &str) -> Result<AdamState> {
    let corrupt = |line: usize, message: &str| Error::CorruptCheckpoint {
        line,
        message: message.to_string(),
    };
    let lines: Vec<&str> = text.lines().collect();
    let get = |i: usize| {
        lines
            .get(i)
            .copied()
            .ok_or_else(|| corrupt(i + 1, "unexpected end of file"))
    };
    if get(0)? != OPT_MAGIC {
        return Err(corrupt(1, "missing optimizer header"));
    }
    let field = |i: usize, key: &str| -> Result<&str> {
        let l = get(i)?;
        l.strip_prefix(key)
            .and_then(|r| r.strip_prefix(' '))
            .ok_or_else(|| corrupt(i + 1, &format!("expected `{key}`")))
    };
    let num = |i: usize, key: &str| -> Result<f64> {
        field(i, key)?
            .parse()
            .map_err(|_| corrupt(i + 1, &format!("invalid `{key}`")))
    };
    let int = |i: usize, key: &str| -> Result<u64> {
        field(i, key)?
            .parse()
            .map_err(|_| corrupt(i + 1, &format!("invalid `{key}`")))
    };
    let version = int(1, "format_version")?;
    if version != 1 {
        return Err(Error::CheckpointVersion {
            found: version as u32,
            expected: 1,
        });
    }
    let step = int(2, "step")?;
    let config = AdamConfig {
        learning_rate: num(3, "learning_rate")?,
        decay_rate: num(4, "decay_rate")?,
        decay_steps: int(5, "decay_steps")?,
        beta1: num(6, "beta1")?,
        beta2: num(7, "beta2")?,
        epsilon: num(8, "epsilon")?,
    };
    let count = int(9, "buffers")? as usize;
    let mut first = Vec::with_capacity(count);
    let mut second = Vec::with_capacity(count);
    let parse_buf = |i: usize, key: &str| -> Result<Vec<f64>> {
        let rest = get(i)?;
        let rest = if rest == key {
            ""
        } else {
            rest.strip_prefix(key)
                .and_then(|r| r.strip_prefix(' '))
                .ok_or_else(|| corrupt(i + 1, &format!("expected `{key}`")))?
        };
        rest.split_ascii_whitespace()
            .map(|t| t.parse().map_err(|_| corrupt(i + 1, "invalid float")))
            .collect()
    };
    for k in 0..count {
        first.push(parse_buf(10 + 2 * k, "m")?);
        second.push(parse_buf(11 + 2 * k, "v")?);
    }
    if get(10 + 2 * count)? != "end" {
        return Err(corrupt(11 + 2 * count, "expected `end`"));
    }
    AdamState::from_parts(config, step, first, second)
}
