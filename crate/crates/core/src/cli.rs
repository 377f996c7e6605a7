//! The `deeposets` command line.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::bench::{self, plot, ExperimentReport, LatencyReport, ReportMeta};
use crate::checkpoint::{file_hash, load_checkpoint};
use crate::config::{
    parse_f64_list, parse_usize_list, BenchSettings, EvalSettings, RunConfig, TrainSettings,
};
use crate::error::{Error, Result};
use crate::model::{Preset, Prompt};
use crate::taskgen::{sample_batch, write_task_dump, NoiseScale, TaskDistribution};
use crate::trainer::{optimizer_from_str, Trainer};

#[derive(Debug, Parser)]
#[command(
    name = "deeposets",
    version,
    about = "Train, evaluate and benchmark DeepOSets regression models"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model on freshly sampled tasks.
    Train(TrainArgs),
    /// Evaluate a model and/or OLS over a (d, n, noise) grid.
    Eval(EvalArgs),
    /// Measure inference latency against prompt size.
    Bench(BenchArgs),
    /// Predict query points for a prompt read from a file.
    Predict(PredictArgs),
    /// Render figures from saved reports.
    Plot(PlotArgs),
    /// Dump sampled tasks as JSON lines.
    Tasks(TasksArgs),
}

// Aliases keep clap from treating these as repeated flags.
type UsizeList = Vec<usize>;
type F64List = Vec<f64>;

fn usize_list(s: &str) -> std::result::Result<Vec<usize>, String> {
    parse_usize_list(s)
}

fn f64_list(s: &str) -> std::result::Result<Vec<f64>, String> {
    parse_f64_list(s)
}

fn noise_param(s: &str) -> std::result::Result<NoiseScale, String> {
    match s {
        "variance" => Ok(NoiseScale::Variance),
        "std" => Ok(NoiseScale::Std),
        other => Err(format!("`{other}` is not one of: variance, std")),
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML run configuration; flags override its `[train]` table.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub iterations: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Query points per task.
    #[arg(long)]
    pub queries: Option<usize>,
    /// Prompt examples per training task.
    #[arg(long)]
    pub examples: Option<usize>,
    /// Noise level of training prompts (default 0).
    #[arg(long)]
    pub train_noise: Option<f64>,
    #[arg(long, value_parser = noise_param)]
    pub noise_param: Option<NoiseScale>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    #[arg(long)]
    pub log_every: Option<u64>,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Continue from `<stem>.ckpt` + `<stem>.adam` written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Evaluate only the least-squares baseline; no checkpoint needed.
    #[arg(long)]
    pub ols_only: bool,
    #[arg(long, value_parser = usize_list)]
    pub dims: Option<UsizeList>,
    /// Prompt sizes, e.g. `10` or `1..20` or `5,10,20`.
    #[arg(long, value_parser = usize_list)]
    pub ns: Option<UsizeList>,
    /// Noise levels, e.g. `0,0.04,0.2,2.0`.
    #[arg(long, value_parser = f64_list)]
    pub noise: Option<F64List>,
    /// Read noise levels as variances (default) or standard deviations.
    #[arg(long, value_parser = noise_param)]
    pub noise_param: Option<NoiseScale>,
    #[arg(long)]
    pub tasks: Option<usize>,
    #[arg(long)]
    pub queries: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub threads: Option<usize>,
    /// Also write SVG figures.
    #[arg(long)]
    pub plots: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_parser = usize_list)]
    pub ns: Option<UsizeList>,
    #[arg(long)]
    pub repetitions: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub min_sample_micros: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// One example per line: `x_1 … x_d y`.
    #[arg(long)]
    pub prompt: PathBuf,
    /// One query per line: `x_1 … x_d`.
    #[arg(long)]
    pub queries: Option<PathBuf>,
    /// A query given inline; may be repeated.
    #[arg(long = "query", allow_hyphen_values = true)]
    pub query: Vec<String>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub latency: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TasksArgs {
    #[arg(long, default_value_t = 1)]
    pub dim: usize,
    #[arg(long, default_value_t = 10)]
    pub examples: usize,
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, value_parser = noise_param, default_value = "variance")]
    pub noise_param: NoiseScale,
    #[arg(long, default_value_t = 1)]
    pub queries: usize,
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    /// Index of the first task.
    #[arg(long, default_value_t = 0)]
    pub start: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Bench(a) => cmd_bench(&a),
        Command::Predict(a) => cmd_predict(&a, &mut std::io::stdout().lock()),
        Command::Plot(a) => cmd_plot(&a),
        Command::Tasks(a) => cmd_tasks(&a),
    }
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn stem_paths(stem: &Path) -> (PathBuf, PathBuf) {
    let base = if stem.extension().is_some_and(|e| e == "ckpt") {
        stem.with_extension("")
    } else {
        stem.to_path_buf()
    };
    (base.with_extension("ckpt"), base.with_extension("adam"))
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let file = RunConfig::load_optional(a.config.as_deref())?;
    let flags = TrainSettings {
        preset: a.preset,
        iterations: a.iterations,
        batch_size: a.batch_size,
        queries: a.queries,
        examples: a.examples,
        train_noise: a.train_noise,
        noise_param: a.noise_param,
        seed: a.seed,
        checkpoint_every: a.checkpoint_every,
        log_every: a.log_every,
        threads: a.threads,
        learning_rate: a.learning_rate,
        decay_rate: None,
        decay_steps: None,
    };
    let settings = file.train.overlay(&flags);
    let config = settings.resolve()?;
    std::fs::create_dir_all(&a.out)?;

    let mut trainer = match &a.resume {
        Some(stem) => {
            let (ckpt, adam) = stem_paths(stem);
            let (model, _) = load_checkpoint(&ckpt)?;
            let optimizer = optimizer_from_str(&std::fs::read_to_string(&adam)?)?;
            Trainer::resume(config.clone(), model, optimizer)?
        }
        None => Trainer::new(config.clone())?,
    };
    let echo = json!({
        "command": "train",
        "settings": settings,
        "resolved": config,
        "resumed_from": a.resume,
    });
    write_json(&a.out.join("config.json"), &echo)?;

    let result = trainer.run(Some(&a.out));
    let log_comments = vec![serde_json::to_string(&echo)?];
    trainer.log().write_csv(
        std::fs::File::create(a.out.join("train_log.csv"))?,
        &log_comments,
    )?;
    result?;
    let ckpt = trainer.save_state(&a.out, "model")?;
    let smoothed = trainer
        .log()
        .smoothed_loss(crate::trainer::SMOOTHING_WINDOW);
    let summary = json!({
        "iterations": trainer.iteration(),
        "final_loss": trainer.log().losses.last(),
        "smoothed_loss": smoothed,
        "checkpoint": ckpt,
        "checkpoint_sha256": file_hash(&ckpt)?,
        "config": echo,
    });
    write_json(&a.out.join("summary.json"), &summary)?;
    eprintln!(
        "trained {} iterations; smoothed loss {}; checkpoint {}",
        trainer.iteration(),
        smoothed.map_or("n/a".to_string(), |v| format!("{v:.4e}")),
        ckpt.display()
    );
    Ok(())
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let file = RunConfig::load_optional(a.config.as_deref())?;
    let flags = EvalSettings {
        checkpoint: a.checkpoint.clone(),
        ols_only: a.ols_only.then_some(true),
        dims: a.dims.clone(),
        ns: a.ns.clone(),
        noise: a.noise.clone(),
        noise_param: a.noise_param,
        tasks: a.tasks,
        queries: a.queries,
        seed: a.seed,
        threads: a.threads,
        plots: a.plots.then_some(true),
    };
    let settings = file.eval.overlay(&flags);
    let ols_only = settings.ols_only.unwrap_or(false);
    let model_dim = match (&settings.checkpoint, ols_only) {
        (_, true) => None,
        (Some(p), false) => {
            if !p.exists() {
                return Err(Error::Config(format!(
                    "checkpoint {} not found",
                    p.display()
                )));
            }
            Some(load_checkpoint(p)?.0.input_dim())
        }
        (None, false) => {
            return Err(Error::Config(
                "eval needs --checkpoint, or --ols-only for the baseline alone".into(),
            ))
        }
    };
    let grid = settings.resolve(model_dim)?;
    std::fs::create_dir_all(&a.out)?;
    let mut report = bench::run_eval_grid(&grid)?;
    report.meta.config = json!({ "command": "eval", "settings": settings, "grid": grid });
    report.write_json(&a.out.join("report.json"))?;
    report.save_csv(&a.out.join("report.csv"))?;

    let mut summaries = Vec::new();
    for &d in &grid.dims {
        for &n in &grid.ns {
            if let Ok(s) = bench::compare_noise_robustness(&report, d, n) {
                summaries.push(s);
            }
        }
    }
    if !summaries.is_empty() {
        write_json(
            &a.out.join("robustness.json"),
            &json!({ "meta": report.meta, "summaries": summaries }),
        )?;
    }
    if settings.plots.unwrap_or(false) {
        plot::plot_report(&report, &a.out)?;
    }
    print_cells(&report);
    Ok(())
}

fn print_cells(report: &ExperimentReport) {
    for c in &report.cells {
        eprintln!(
            "{:<9} d={} n={:<3} noise={:<6} mse={:.4e} ± {:.1e}",
            c.method, c.d, c.n, c.noise, c.mean_mse, c.std_error
        );
    }
}

pub fn cmd_bench(a: &BenchArgs) -> Result<()> {
    let file = RunConfig::load_optional(a.config.as_deref())?;
    let flags = BenchSettings {
        checkpoint: a.checkpoint.clone(),
        ns: a.ns.clone(),
        repetitions: a.repetitions,
        seed: a.seed,
        min_sample_micros: a.min_sample_micros,
    };
    let settings = file.bench.overlay(&flags);
    let cfg = settings.resolve()?;
    let path = settings
        .checkpoint
        .clone()
        .ok_or_else(|| Error::Config("bench needs --checkpoint".into()))?;
    if !path.exists() {
        return Err(Error::Config(format!(
            "checkpoint {} not found",
            path.display()
        )));
    }
    let (model, _) = load_checkpoint(&path)?;
    let mut meta = ReportMeta::new(
        cfg.seed,
        json!({ "command": "bench", "settings": settings, "latency": cfg }),
    );
    meta.checkpoint = Some(path.display().to_string());
    meta.checkpoint_sha256 = Some(file_hash(&path)?);
    std::fs::create_dir_all(&a.out)?;
    let report = bench::run_latency_bench(&model, &cfg, meta)?;
    report.write_json(&a.out.join("latency.json"))?;
    report.save_csv(&a.out.join("latency.csv"))?;
    plot::plot_latency(&report, &a.out.join("latency.svg"))?;
    for r in &report.rows {
        eprintln!(
            "n={:<4} encode {:.4} ms  first query {:.4} ms  cached query {:.5} ms",
            r.n, r.encode.median_ms, r.first_query.median_ms, r.cached_query.median_ms
        );
    }
    Ok(())
}

fn parse_numbers(line: &str, path: &Path, lineno: usize) -> Result<Vec<f64>> {
    line.split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    path: path.to_path_buf(),
                    line: lineno,
                    message: format!("`{t}` is not a finite number"),
                })
        })
        .collect()
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty())
}

/// Parses `x_1 … x_d y` lines. Blank lines and `#` comments are skipped.
pub fn parse_prompt(text: &str, path: &Path, dim: usize) -> Result<Prompt> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (lineno, line) in content_lines(text) {
        let v = parse_numbers(line, path, lineno)?;
        if v.len() != dim + 1 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: lineno,
                message: format!(
                    "expected {} values (x_1..x_{dim} y), found {}",
                    dim + 1,
                    v.len()
                ),
            });
        }
        xs.extend_from_slice(&v[..dim]);
        ys.push(v[dim]);
    }
    if ys.is_empty() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: "prompt has no examples".into(),
        });
    }
    Prompt::new(dim, xs, ys)
}

/// Parses `x_1 … x_d` lines into row-major queries.
pub fn parse_queries(text: &str, path: &Path, dim: usize) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (lineno, line) in content_lines(text) {
        let v = parse_numbers(line, path, lineno)?;
        if v.len() != dim {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: lineno,
                message: format!("query has {} values, model expects d={dim}", v.len()),
            });
        }
        out.extend(v);
    }
    Ok(out)
}

pub fn cmd_predict<W: Write>(a: &PredictArgs, out: &mut W) -> Result<()> {
    let (model, _) = load_checkpoint(&a.checkpoint)?;
    let d = model.input_dim();
    let prompt = parse_prompt(&std::fs::read_to_string(&a.prompt)?, &a.prompt, d)?;
    let mut queries = Vec::new();
    if let Some(p) = &a.queries {
        queries.extend(parse_queries(&std::fs::read_to_string(p)?, p, d)?);
    }
    let inline = Path::new("--query");
    for (i, q) in a.query.iter().enumerate() {
        queries.extend(parse_queries(q, inline, d).map_err(|e| match e {
            Error::Parse { message, .. } => Error::Parse {
                path: inline.to_path_buf(),
                line: i + 1,
                message,
            },
            other => other,
        })?);
    }
    if queries.is_empty() {
        return Ok(());
    }
    let cache = model.cache(&prompt)?;
    for y in model.predict_batch(&cache, &queries)? {
        writeln!(out, "{y}")?;
    }
    Ok(())
}

pub fn cmd_plot(a: &PlotArgs) -> Result<()> {
    if a.report.is_none() && a.latency.is_none() {
        return Err(Error::Config("plot needs --report and/or --latency".into()));
    }
    std::fs::create_dir_all(&a.out)?;
    if let Some(p) = &a.report {
        plot::plot_report(&ExperimentReport::load(p)?, &a.out)?;
    }
    if let Some(p) = &a.latency {
        plot::plot_latency(&LatencyReport::load(p)?, &a.out.join("latency.svg"))?;
    }
    Ok(())
}

pub fn cmd_tasks(a: &TasksArgs) -> Result<()> {
    let mut dist = TaskDistribution::new(a.dim, a.examples, a.noise, a.queries, a.seed);
    dist.noise_scale = a.noise_param;
    dist.validate()?;
    let tasks = sample_batch(&dist, a.start, a.count)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let f = std::io::BufWriter::new(std::fs::File::create(&a.out)?);
    write_task_dump(f, &dist, &tasks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prompt_parsing() {
        let p = parse_prompt("# f(x)=2x\n1 2\n\n2 4  # two\n3 6\n", Path::new("p"), 1).unwrap();
        assert_eq!(p.len(), 3);
        assert_eq!(p.ys(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn prompt_errors_carry_line_numbers() {
        match parse_prompt("1 2\n2 x\n", Path::new("p"), 1).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            e => panic!("{e}"),
        }
        match parse_prompt("1 2\n\n2 4 5\n", Path::new("p"), 1).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn query_dimension_checked() {
        assert!(parse_queries("1 2\n", Path::new("q"), 1).is_err());
        assert_eq!(
            parse_queries("1 2\n3 4\n", Path::new("q"), 2).unwrap(),
            vec![1.0, 2.0, 3.0, 4.0]
        );
    }

    #[test]
    fn resume_stem() {
        let (c, a) = stem_paths(Path::new("out/model.ckpt"));
        assert_eq!(c, Path::new("out/model.ckpt"));
        assert_eq!(a, Path::new("out/model.adam"));
        assert_eq!(
            stem_paths(Path::new("out/checkpoint_000100")).1,
            Path::new("out/checkpoint_000100.adam")
        );
    }
}
