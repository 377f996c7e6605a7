//! Inference latency versus prompt size.
//!
//! Three quantities per `n`: encoding a prompt into a branch cache, answering
//! the first query from scratch (encode + one trunk pass), and answering a
//! further query from a cache held fixed. Each is sampled `repetitions` times
//! after discarding a 10% warmup; we report median and interquartile range.

use std::hint::black_box;
use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::report::ReportMeta;
use crate::error::{Error, Result};
use crate::model::DeepOSetsModel;
use crate::taskgen::{sample_task, TaskDistribution};

pub const MIN_REPETITIONS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencyConfig {
    pub ns: Vec<usize>,
    pub repetitions: usize,
    pub seed: u64,
    /// Shortest wall time a single measurement may span; shorter calls are
    /// batched until they reach it.
    pub min_sample_micros: f64,
}

impl LatencyConfig {
    pub fn new(ns: Vec<usize>, repetitions: usize) -> Self {
        Self {
            ns,
            repetitions,
            seed: 0,
            min_sample_micros: 20.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.repetitions < MIN_REPETITIONS {
            return Err(Error::Bench(format!(
                "repetitions must be at least {MIN_REPETITIONS} after warmup, got {}",
                self.repetitions
            )));
        }
        if self.ns.is_empty() {
            return Err(Error::Bench("n list is empty".into()));
        }
        if self.ns.contains(&0) {
            return Err(Error::Bench("n must be ≥ 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    pub median_ms: f64,
    pub q1_ms: f64,
    pub q3_ms: f64,
    pub samples: usize,
    /// Calls averaged into each sample.
    pub calls_per_sample: usize,
}

impl TimingStats {
    pub fn iqr_ms(&self) -> f64 {
        self.q3_ms - self.q1_ms
    }

    pub fn from_samples(mut ms: Vec<f64>, calls_per_sample: usize) -> Self {
        ms.sort_by(f64::total_cmp);
        Self {
            median_ms: quantile(&ms, 0.5),
            q1_ms: quantile(&ms, 0.25),
            q3_ms: quantile(&ms, 0.75),
            samples: ms.len(),
            calls_per_sample,
        }
    }
}

/// Linear-interpolated quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile(&v, 0.5)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyRow {
    pub n: usize,
    pub encode: TimingStats,
    pub first_query: TimingStats,
    pub cached_query: TimingStats,
    /// Floats held by the branch cache; independent of `n`.
    pub cache_floats: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineInfo {
    pub os: String,
    pub arch: String,
    pub cpu: String,
    pub logical_cpus: usize,
    pub timer_resolution_ns: f64,
}

impl MachineInfo {
    pub fn detect() -> Self {
        let cpu = std::fs::read_to_string("/proc/cpuinfo")
            .ok()
            .and_then(|s| {
                s.lines()
                    .find(|l| l.starts_with("model name"))
                    .and_then(|l| l.split_once(':'))
                    .map(|(_, v)| v.trim().to_string())
            })
            .unwrap_or_else(|| "unknown".to_string());
        Self {
            os: std::env::consts::OS.to_string(),
            arch: std::env::consts::ARCH.to_string(),
            cpu,
            logical_cpus: std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1),
            timer_resolution_ns: timer_resolution().as_secs_f64() * 1e9,
        }
    }
}

/// Smallest non-zero step observed between consecutive `Instant::now()` calls.
pub fn timer_resolution() -> Duration {
    let mut best = Duration::MAX;
    for _ in 0..200 {
        let a = Instant::now();
        let mut b = Instant::now();
        while b == a {
            b = Instant::now();
        }
        best = best.min(b - a);
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub meta: ReportMeta,
    pub machine: MachineInfo,
    pub rows: Vec<LatencyRow>,
    /// Theil–Sen slope of median cached-query time against `n` (ms per example).
    pub cached_slope_ms_per_example: Option<f64>,
    pub encode_slope_ms_per_example: Option<f64>,
    pub notes: Vec<String>,
}

impl LatencyReport {
    pub fn row(&self, n: usize) -> Option<&LatencyRow> {
        self.rows.iter().find(|r| r.n == n)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# {}", serde_json::to_string(&self.meta)?)?;
        writeln!(out, "# {}", serde_json::to_string(&self.machine)?)?;
        writeln!(
            out,
            "n,encode_median_ms,encode_iqr_ms,first_query_median_ms,first_query_iqr_ms,cached_query_median_ms,cached_query_iqr_ms,cached_calls_per_sample"
        )?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{}",
                r.n,
                r.encode.median_ms,
                r.encode.iqr_ms(),
                r.first_query.median_ms,
                r.first_query.iqr_ms(),
                r.cached_query.median_ms,
                r.cached_query.iqr_ms(),
                r.cached_query.calls_per_sample
            )?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))
    }
}

/// Median of all pairwise slopes, and the median intercept for that slope.
pub fn theil_sen(xs: &[f64], ys: &[f64]) -> Option<(f64, f64)> {
    let mut slopes = Vec::new();
    for i in 0..xs.len() {
        for j in i + 1..xs.len() {
            if xs[j] != xs[i] {
                slopes.push((ys[j] - ys[i]) / (xs[j] - xs[i]));
            }
        }
    }
    if slopes.is_empty() {
        return None;
    }
    let slope = median(&slopes);
    let intercepts: Vec<f64> = xs.iter().zip(ys).map(|(x, y)| y - slope * x).collect();
    Some((slope, median(&intercepts)))
}

/// Times `f` `repetitions` times after a 10% warmup. If a single call is
/// shorter than `min_sample`, each sample averages enough calls to reach it.
fn measure<F: FnMut()>(mut f: F, repetitions: usize, min_sample: Duration) -> TimingStats {
    let mut calls = 1usize;
    loop {
        let t = Instant::now();
        for _ in 0..calls {
            f();
        }
        if t.elapsed() >= min_sample || calls >= 1 << 20 {
            break;
        }
        calls *= 2;
    }
    let warmup = repetitions.div_ceil(10);
    let mut samples = Vec::with_capacity(repetitions);
    for k in 0..warmup + repetitions {
        let t = Instant::now();
        for _ in 0..calls {
            f();
        }
        let ms = t.elapsed().as_secs_f64() * 1e3 / calls as f64;
        if k >= warmup {
            samples.push(ms);
        }
    }
    TimingStats::from_samples(samples, calls)
}

fn bench_rows(
    model: &DeepOSetsModel,
    cfg: &LatencyConfig,
) -> Result<(Vec<LatencyRow>, Vec<String>)> {
    let d = model.input_dim();
    let min_sample = Duration::from_secs_f64(cfg.min_sample_micros * 1e-6);
    let mut rows = Vec::with_capacity(cfg.ns.len());
    let mut notes = Vec::new();
    for &n in &cfg.ns {
        // 64 distinct queries, cycled so every call sees a fresh input.
        let task = sample_task(&TaskDistribution::new(d, n, 0.0, 64, cfg.seed), n as u64)?;
        let prompt = &task.prompt;
        let queries: Vec<&[f64]> = (0..task.query_count()).map(|j| task.query(j)).collect();

        let encode = measure(
            || {
                black_box(model.cache(black_box(prompt)).expect("valid prompt"));
            },
            cfg.repetitions,
            min_sample,
        );
        let mut k = 0;
        let first_query = measure(
            || {
                k = (k + 1) % queries.len();
                black_box(
                    model
                        .predict_full(black_box(prompt), queries[k])
                        .expect("valid prompt"),
                );
            },
            cfg.repetitions,
            min_sample,
        );
        let cache = model.cache(prompt)?;
        let cached_query = measure(
            || {
                k = (k + 1) % queries.len();
                black_box(
                    model
                        .predict(black_box(&cache), queries[k])
                        .expect("valid query"),
                );
            },
            cfg.repetitions,
            min_sample,
        );
        for (what, s) in [
            ("encode", &encode),
            ("first query", &first_query),
            ("cached query", &cached_query),
        ] {
            if s.calls_per_sample > 1 {
                notes.push(format!(
                    "n={n}: {what} below {} µs per call; each sample averages {} calls",
                    cfg.min_sample_micros, s.calls_per_sample
                ));
            }
        }
        rows.push(LatencyRow {
            n,
            encode,
            first_query,
            cached_query,
            cache_floats: cache.len() + 1,
        });
    }
    Ok((rows, notes))
}

/// Runs the benchmark on one dedicated thread so no other work of this
/// process competes with it.
pub fn run_latency_bench(
    model: &DeepOSetsModel,
    cfg: &LatencyConfig,
    meta: ReportMeta,
) -> Result<LatencyReport> {
    cfg.validate()?;
    let (rows, notes) = std::thread::scope(|s| {
        s.spawn(|| bench_rows(model, cfg))
            .join()
            .map_err(|_| Error::Bench("benchmark thread panicked".into()))
    })??;
    let ns: Vec<f64> = rows.iter().map(|r| r.n as f64).collect();
    let slope = |f: fn(&LatencyRow) -> f64| {
        let ys: Vec<f64> = rows.iter().map(f).collect();
        theil_sen(&ns, &ys).map(|(s, _)| s)
    };
    Ok(LatencyReport {
        meta,
        machine: MachineInfo::detect(),
        cached_slope_ms_per_example: slope(|r| r.cached_query.median_ms),
        encode_slope_ms_per_example: slope(|r| r.encode.median_ms),
        rows,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    #[test]
    fn rejects_few_repetitions() {
        let e = LatencyConfig::new(vec![10], 99).validate().unwrap_err();
        assert!(e.to_string().contains("100"));
    }

    #[test]
    fn theil_sen_exact_line_and_outlier() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        let (s, b) = theil_sen(&xs, &[3.0, 5.0, 7.0, 9.0, 11.0]).unwrap();
        assert!((s - 2.0).abs() < 1e-12 && (b - 1.0).abs() < 1e-12);
        let (s, _) = theil_sen(&xs, &[1.0, 1.0, 100.0, 1.0, 1.0]).unwrap();
        assert_eq!(s, 0.0);
        assert!(theil_sen(&[1.0], &[2.0]).is_none());
    }

    #[test]
    fn quantiles() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile(&v, 0.5), 3.0);
        assert_eq!(quantile(&v, 0.25), 2.0);
        assert_eq!(quantile(&[1.0, 2.0], 0.5), 1.5);
    }

    #[test]
    fn single_n_gives_single_row() {
        let m = DeepOSetsModel::init(ModelConfig::new(1, 2, &[4], 4, &[4], &[4], 3), 0).unwrap();
        let r = run_latency_bench(
            &m,
            &LatencyConfig::new(vec![5], 100),
            ReportMeta::new(0, serde_json::Value::Null),
        )
        .unwrap();
        assert_eq!(r.rows.len(), 1);
        assert_eq!(r.rows[0].cache_floats, 4);
        assert!(r.rows[0].cached_query.median_ms > 0.0);
        assert!(r.cached_slope_ms_per_example.is_none());
    }
}
