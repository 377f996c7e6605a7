//! Acceptance suite: one PASS/FAIL line per criterion, then a single assert.
//!
//! Criteria 4–7 and 9 need trained models; the d=1 and d=5 presets are trained
//! here from scratch (about 3 and 30 minutes on one core). Two environment
//! variables adjust this:
//!
//! * `DEEPOSETS_ACCEPTANCE_CACHE=<dir>` reuses checkpoints and loss histories
//!   saved there by an earlier run with the same settings.
//! * `DEEPOSETS_D5_ITERATIONS=<k>` shortens the d=5 run; its loss threshold is
//!   then relaxed by the factor 16000/k, and the line says so.

mod common;

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use common::{
    gradient_check, ols_expected_mse, origin_fit_r2, relative_diff, small_config, small_tasks,
};
use deeposets::bench::{
    compare_noise_robustness, evaluate_grid, run_latency_bench, EvalGrid, ExperimentReport,
    LatencyConfig, Method, ReportMeta,
};
use deeposets::checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
use deeposets::model::{DeepOSetsModel, ModelConfig, Preset};
use deeposets::rng::GaussianStream;
use deeposets::trainer::{TrainConfig, TrainLog, Trainer, SMOOTHING_WINDOW};
use deeposets::Prompt;
use serde::{Deserialize, Serialize};

const FULL_ITERATIONS: u64 = 16_000;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

#[derive(Serialize, Deserialize)]
struct Trained {
    losses: Vec<f64>,
    iterations: u64,
}

struct TrainedModel {
    model: DeepOSetsModel,
    log: TrainLog,
    iterations: u64,
    from_cache: bool,
}

fn train_preset(preset: Preset, iterations: u64) -> TrainedModel {
    let cache = std::env::var_os("DEEPOSETS_ACCEPTANCE_CACHE").map(PathBuf::from);
    let stem = format!("{preset}_seed0_it{iterations}");
    if let Some(dir) = &cache {
        let ckpt = dir.join(format!("{stem}.ckpt"));
        let hist = dir.join(format!("{stem}.losses.json"));
        if let (Ok((model, _)), Ok(text)) = (load_checkpoint(&ckpt), std::fs::read_to_string(&hist))
        {
            let t: Trained = serde_json::from_str(&text).unwrap();
            return TrainedModel {
                model,
                log: TrainLog {
                    rows: vec![],
                    losses: t.losses,
                },
                iterations: t.iterations,
                from_cache: true,
            };
        }
    }
    let mut cfg = TrainConfig::preset(preset, 0);
    cfg.iterations = iterations;
    cfg.log_every = 0;
    let mut trainer = Trainer::new(cfg).unwrap();
    trainer.run(None).unwrap();
    let (model, log) = trainer.into_parts();
    if let Some(dir) = &cache {
        std::fs::create_dir_all(dir).unwrap();
        let meta = CheckpointMeta {
            seed: 0,
            iterations,
            final_loss: log.losses.last().copied(),
        };
        save_checkpoint(&model, &meta, &dir.join(format!("{stem}.ckpt"))).unwrap();
        let t = Trained {
            losses: log.losses.clone(),
            iterations,
        };
        std::fs::write(
            dir.join(format!("{stem}.losses.json")),
            serde_json::to_string(&t).unwrap(),
        )
        .unwrap();
    }
    TrainedModel {
        model,
        log,
        iterations,
        from_cache: false,
    }
}

fn criterion_1_gradients() -> Outcome {
    let mut rng = GaussianStream::new(2024);
    let mut worst: f64 = 0.0;
    let (mut checked, mut unresolved, mut violations) = (0, 0, 0);
    let configs = 20;
    for c in 0..configs {
        let widths = std::array::from_fn(|_| rng.next_index(1, 8));
        let depth = rng.next_index(1, 2);
        let n = rng.next_index(1, 5);
        let model = DeepOSetsModel::init(small_config(&widths, depth), c)
            .unwrap()
            .randomized(c + 100, 0.8);
        let tasks = small_tasks(n, 2, c, 2);
        let r = gradient_check(&model, &tasks, 1e-5, 1e-5);
        worst = worst.max(r.worst_relative);
        checked += r.checked;
        unresolved += r.below_resolution;
        violations += r.violations;
    }
    outcome(
        worst < 1e-5 && violations == 0,
        format!(
            "worst relative error {worst:.2e} over {checked} parameters in {configs} random configurations; \
             {unresolved} gradients below the difference quotient's resolution agree within its round-off"
        ),
    )
}

fn random_prompt(rng: &mut GaussianStream, d: usize) -> Prompt {
    let n = rng.next_index(1, 20);
    Prompt::new(d, rng.normals(n * d), rng.normals(n)).unwrap()
}

fn criterion_2_invariance() -> Outcome {
    let mut rng = GaussianStream::new(77);
    let mut bit_exact = 0;
    let mut worst_dup: f64 = 0.0;
    let triples = 1000;
    for t in 0..triples {
        let d = rng.next_index(1, 5);
        let (e, h, p, r) = (
            rng.next_index(1, 6),
            rng.next_index(1, 8),
            rng.next_index(1, 10),
            rng.next_index(1, 8),
        );
        let model = DeepOSetsModel::init(ModelConfig::new(d, e, &[h, h], p, &[h], &[h], r), t)
            .unwrap()
            .randomized(t ^ 0xABCD, 1.0);
        let prompt = random_prompt(&mut rng, d);
        let mut perm: Vec<usize> = (0..prompt.len()).collect();
        for i in (1..perm.len()).rev() {
            perm.swap(i, rng.next_index(0, i));
        }
        let q = rng.normals(d);
        let a = model.predict_full(&prompt, &q).unwrap();
        let b = model
            .predict_full(&prompt.permuted(&perm).unwrap(), &q)
            .unwrap();
        if a.to_bits() == b.to_bits() {
            bit_exact += 1;
        }
        let k = rng.next_index(2, 4);
        worst_dup = worst_dup.max(relative_diff(
            a,
            model.predict_full(&prompt.repeated(k), &q).unwrap(),
        ));
    }
    outcome(
        bit_exact == triples && worst_dup <= 1e-12,
        format!("{bit_exact}/{triples} permutations bit-identical; worst duplication drift {worst_dup:.1e}"),
    )
}

fn ols_cells(
    d: usize,
    n: usize,
    noise: Vec<f64>,
    tasks: usize,
) -> Vec<deeposets::bench::CellResult> {
    let mut g = EvalGrid::new(vec![d], vec![n], noise);
    g.tasks_per_cell = tasks;
    g.seed = 3;
    evaluate_grid(&g, None).unwrap()
}

fn criterion_3_ols() -> Outcome {
    let d1 = ols_cells(1, 10, vec![0.0], 2000)[0].mean_mse;
    let d5 = ols_cells(5, 10, vec![0.0], 2000)[0].mean_mse;
    let levels = vec![0.04, 0.2, 0.5, 1.0, 2.0];
    let cells = ols_cells(1, 10, levels.clone(), 2000);
    let mse: Vec<f64> = cells.iter().map(|c| c.mean_mse).collect();
    let (r2, slope) = origin_fit_r2(&levels, &mse);
    let expected = ols_expected_mse(1.0, 1, 10);
    let slope_ok = (slope - expected).abs() < 0.1 * expected;
    outcome(
        d1 <= 1e-10 && d5 <= 1e-8 && r2 > 0.99 && slope_ok,
        format!(
            "noiseless MSE d=1 {d1:.1e}, d=5 {d5:.1e}; MSE vs σ² R² {r2:.5}, slope {slope:.4} (oracle {expected:.4})"
        ),
    )
}

fn eval_model(model: &DeepOSetsModel, noise: Vec<f64>) -> ExperimentReport {
    let grid = EvalGrid::new(vec![model.input_dim()], vec![10], noise);
    let cells = evaluate_grid(&grid, Some(model)).unwrap();
    ExperimentReport::new(
        ReportMeta::new(grid.seed, serde_json::to_value(&grid).unwrap()),
        cells,
    )
}

fn criterion_4_d1_training(t: &TrainedModel, report: &ExperimentReport) -> Outcome {
    let smoothed = t.log.smoothed_loss(SMOOTHING_WINDOW).unwrap();
    let early = t.log.moving_average(1000, SMOOTHING_WINDOW).unwrap();
    let test = report.cell(Method::DeepOSets, 1, 10, 0.2).unwrap();
    outcome(
        t.iterations == FULL_ITERATIONS && smoothed <= 5e-3 && test.mean_mse <= 0.05 && smoothed < early,
        format!(
            "{} iterations{}; smoothed train MSE {smoothed:.2e} (≤ 5e-3; was {early:.2e} at 1K); test MSE n=10 σ²=0.2 {:.3e} ± {:.1e} (≤ 0.05)",
            t.iterations,
            if t.from_cache { " (cached)" } else { "" },
            test.mean_mse,
            test.std_error
        ),
    )
}

fn criterion_5_noise(report: &ExperimentReport) -> Outcome {
    let mse = |m: Method, noise: f64| report.cell(m, 1, 10, noise).unwrap().mean_mse;
    let high = mse(Method::DeepOSets, 2.0);
    let ours = high / mse(Method::DeepOSets, 0.2);
    let ols = mse(Method::Ols, 2.0) / mse(Method::Ols, 0.2);
    let flag = compare_noise_robustness(report, 1, 10).unwrap().flag;
    outcome(
        high <= 1.0 && ours < ols,
        format!(
            "MSE at σ²=2.0 {high:.3} (≤ 1.0); ratio σ²=2.0/σ²=0.2: deeposets {ours:.2}, ols {ols:.2}; summary flag {flag:?}"
        ),
    )
}

fn criterion_6_d5() -> Outcome {
    let iterations = std::env::var("DEEPOSETS_D5_ITERATIONS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(FULL_ITERATIONS);
    let threshold = 0.3 * FULL_ITERATIONS as f64 / iterations as f64;
    let t = train_preset(Preset::D5, iterations);
    let smoothed = t.log.smoothed_loss(SMOOTHING_WINDOW).unwrap();
    let note = if iterations == FULL_ITERATIONS {
        String::new()
    } else {
        format!(" (reduced run: threshold relaxed from 0.3 by 16000/{iterations})")
    };
    outcome(
        smoothed <= threshold,
        format!(
            "{iterations} iterations{}; smoothed train MSE {smoothed:.3} (≤ {threshold:.3}){note}",
            if t.from_cache { " (cached)" } else { "" }
        ),
    )
}

fn criterion_7_latency(model: &DeepOSetsModel) -> Outcome {
    let cfg = LatencyConfig::new(vec![10, 25, 50, 75, 100], 300);
    let r = run_latency_bench(model, &cfg, ReportMeta::new(0, serde_json::Value::Null)).unwrap();
    let (r10, r100) = (r.row(10).unwrap(), r.row(100).unwrap());
    let cached_ratio = r100.cached_query.median_ms / r10.cached_query.median_ms;
    let encode_ratio = r100.encode.median_ms / r10.encode.median_ms;
    let cache_constant = r
        .rows
        .iter()
        .all(|row| row.cache_floats == r10.cache_floats);
    outcome(
        cached_ratio <= 1.5 && encode_ratio <= 15.0 && r10.cached_query.median_ms < 1.0 && cache_constant,
        format!(
            "cached query {:.4} ms (n=10) vs {:.4} ms (n=100), ratio {cached_ratio:.2} (≤ 1.5); encode ratio {encode_ratio:.2} (≤ 15); cache {} floats at every n",
            r10.cached_query.median_ms, r100.cached_query.median_ms, r10.cache_floats
        ),
    )
}

fn criterion_8_counts() -> Outcome {
    let d1 = DeepOSetsModel::init(Preset::D1.config(), 0)
        .unwrap()
        .parameter_count();
    let d5 = DeepOSetsModel::init(Preset::D5.config(), 0)
        .unwrap()
        .parameter_count();
    outcome(
        (60_000..=85_000).contains(&d1) && (450_000..=700_000).contains(&d5),
        format!("d=1 preset {d1} parameters (60K–85K); d=5 preset {d5} (0.45M–0.70M)"),
    )
}

fn criterion_9_checkpoint(model: &DeepOSetsModel) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let meta = CheckpointMeta {
        seed: 0,
        iterations: FULL_ITERATIONS,
        final_loss: Some(1e-3),
    };
    let (a, b) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
    save_checkpoint(model, &meta, &a).unwrap();
    let (loaded, meta2) = load_checkpoint(&a).unwrap();
    save_checkpoint(&loaded, &meta2, &b).unwrap();
    let bytes_equal = std::fs::read(&a).unwrap() == std::fs::read(&b).unwrap();
    let mut rng = GaussianStream::new(9);
    let mut mismatches = 0;
    for _ in 0..200 {
        let p = random_prompt(&mut rng, model.input_dim());
        let q = rng.normals(model.input_dim());
        if model.predict_full(&p, &q).unwrap().to_bits()
            != loaded.predict_full(&p, &q).unwrap().to_bits()
        {
            mismatches += 1;
        }
    }
    outcome(
        bytes_equal && mismatches == 0 && &loaded == model,
        format!(
            "save→load→save byte-identical: {bytes_equal}; prediction mismatches: {mismatches}/200"
        ),
    )
}

fn guarded<F: FnOnce() -> Outcome>(f: F) -> Outcome {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        outcome(false, format!("panicked: {msg}"))
    })
}

#[test]
fn acceptance() {
    let mut results: Vec<(u8, &str, Outcome)> = Vec::new();
    results.push((1, "gradient correctness", guarded(criterion_1_gradients)));
    results.push((
        2,
        "permutation & duplication invariance",
        guarded(criterion_2_invariance),
    ));
    results.push((3, "OLS oracle", guarded(criterion_3_ols)));

    let d1 = catch_unwind(|| train_preset(Preset::D1, FULL_ITERATIONS)).ok();
    let report = d1
        .as_ref()
        .map(|t| eval_model(&t.model, vec![0.0, 0.04, 0.2, 1.0, 2.0]));
    let need_d1 = || outcome(false, "d=1 training failed".to_string());
    match (&d1, &report) {
        (Some(t), Some(r)) => {
            results.push((
                4,
                "d=1 training reproduction",
                guarded(|| criterion_4_d1_training(t, r)),
            ));
            results.push((5, "noise robustness", guarded(|| criterion_5_noise(r))));
        }
        _ => {
            results.push((4, "d=1 training reproduction", need_d1()));
            results.push((5, "noise robustness", need_d1()));
        }
    }
    results.push((6, "d=5 training", guarded(criterion_6_d5)));
    match &d1 {
        Some(t) => {
            results.push((
                7,
                "complexity contract",
                guarded(|| criterion_7_latency(&t.model)),
            ));
            results.push((8, "parameter counts", guarded(criterion_8_counts)));
            results.push((
                9,
                "checkpoint round-trip",
                guarded(|| criterion_9_checkpoint(&t.model)),
            ));
        }
        None => {
            results.push((7, "complexity contract", need_d1()));
            results.push((8, "parameter counts", guarded(criterion_8_counts)));
            results.push((9, "checkpoint round-trip", need_d1()));
        }
    }

    // Written to the raw handle so the lines show up even when the harness
    // captures output of passing tests.
    let mut text = String::from("\n");
    for (id, name, o) in &results {
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        text += &format!("criterion {id} [{name}]: {verdict} ({})\n", o.detail);
    }
    if let Some(r) = &report {
        for c in &r.cells {
            text += &format!(
                "  {} d={} n={} σ²={}: MSE {:.3e} ± {:.1e}\n",
                c.method, c.d, c.n, c.noise, c.mean_mse, c.std_error
            );
        }
    }
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes()).unwrap();
    out.flush().unwrap();
    let failed: Vec<u8> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
