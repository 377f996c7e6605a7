mod common;

use common::{ols_expected_mse, ols_slope_1d, origin_fit_r2};
use deeposets::baseline::ols_fit;
use deeposets::bench::{evaluate_grid, EvalGrid, Method};
use deeposets::taskgen::{sample_batch, sample_task, NoiseScale, TaskDistribution};

#[test]
fn label_noise_has_configured_variance() {
    let dist = TaskDistribution::new(1, 1, 0.2, 1, 17);
    let resid: Vec<f64> = sample_batch(&dist, 0, 100_000)
        .unwrap()
        .iter()
        .map(|t| t.prompt.y(0) - t.clean_labels[0])
        .collect();
    let mean = resid.iter().sum::<f64>() / resid.len() as f64;
    let var = resid.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (resid.len() - 1) as f64;
    assert!((var - 0.2).abs() < 0.01, "variance {var}");
    assert!(mean.abs() < 0.01);
}

#[test]
fn std_parameterization_squares_the_level() {
    let mut dist = TaskDistribution::new(1, 1, 0.2, 1, 17);
    dist.noise_scale = NoiseScale::Std;
    let resid: Vec<f64> = sample_batch(&dist, 0, 100_000)
        .unwrap()
        .iter()
        .map(|t| t.prompt.y(0) - t.clean_labels[0])
        .collect();
    let var = resid.iter().map(|r| r * r).sum::<f64>() / resid.len() as f64;
    assert!((var - 0.04).abs() < 0.002, "variance {var}");
}

#[test]
fn weights_have_unit_second_moment() {
    let d = 5;
    let dist = TaskDistribution::new(d, 1, 0.0, 1, 3);
    let tasks = sample_batch(&dist, 0, 20_000).unwrap();
    let m = tasks
        .iter()
        .map(|t| t.weights.iter().map(|a| a * a).sum::<f64>() / d as f64)
        .sum::<f64>()
        / tasks.len() as f64;
    assert!((m - 1.0).abs() < 0.02, "mean aᵀa/d = {m}");
}

#[test]
fn task_index_addressing_is_stable() {
    let dist = TaskDistribution::new(2, 6, 0.3, 2, 99);
    let batch = sample_batch(&dist, 40, 5).unwrap();
    for (k, t) in batch.iter().enumerate() {
        assert_eq!(t, &sample_task(&dist, 40 + k as u64).unwrap());
    }
}

#[test]
fn svd_solution_matches_scalar_closed_form() {
    let dist = TaskDistribution::new(1, 10, 0.2, 1, 5);
    for t in sample_batch(&dist, 0, 500).unwrap() {
        let fit = ols_fit(&t.prompt);
        let closed = ols_slope_1d(&t.prompt);
        assert!((fit.coefficients[0] - closed).abs() <= 1e-12 * (1.0 + closed.abs()));
    }
}

fn ols_grid(
    d: usize,
    ns: Vec<usize>,
    noise: Vec<f64>,
    tasks: usize,
    seed: u64,
) -> Vec<deeposets::bench::CellResult> {
    let mut g = EvalGrid::new(vec![d], ns, noise);
    g.tasks_per_cell = tasks;
    g.queries_per_task = 16;
    g.seed = seed;
    evaluate_grid(&g, None).unwrap()
}

#[test]
fn ols_error_matches_gaussian_design_expectation() {
    for (d, n) in [(1, 10), (5, 20)] {
        let cells = ols_grid(d, vec![n], vec![0.2, 2.0], 4000, 8);
        for c in cells {
            let expect = ols_expected_mse(c.noise, d, n);
            // Per-task MSE is heavy-tailed; allow four standard errors.
            assert!(
                (c.mean_mse - expect).abs() < 4.0 * c.std_error,
                "d={d} n={n} σ²={}: {} vs {expect} (se {})",
                c.noise,
                c.mean_mse,
                c.std_error
            );
        }
    }
}

#[test]
fn ols_error_is_linear_in_noise_variance() {
    let noise = vec![0.04, 0.2, 0.5, 1.0, 2.0];
    let cells = ols_grid(1, vec![10], noise.clone(), 2000, 2);
    let mse: Vec<f64> = cells.iter().map(|c| c.mean_mse).collect();
    let (r2, k) = origin_fit_r2(&noise, &mse);
    assert!(r2 > 0.99, "R² {r2}");
    assert!(
        (k - ols_expected_mse(1.0, 1, 10)).abs() < 0.15 * k,
        "slope {k}"
    );
    let ratio = cells[4].mean_mse / cells[1].mean_mse;
    assert!((ratio - 10.0).abs() < 1.5, "σ²=2.0 / σ²=0.2 ratio {ratio}");
}

#[test]
fn ols_error_does_not_grow_with_n() {
    let cells = ols_grid(1, vec![4, 6, 10, 20, 40], vec![0.5], 2000, 4);
    for w in cells.windows(2) {
        let slack = 2.0 * (w[0].std_error.powi(2) + w[1].std_error.powi(2)).sqrt();
        assert!(
            w[1].mean_mse <= w[0].mean_mse + slack,
            "n={} → n={}",
            w[0].n,
            w[1].n
        );
    }
}

#[test]
fn doubling_tasks_shrinks_standard_error_by_root_two() {
    // Averaged over several seeds so the ratio of two noisy SE estimates
    // concentrates.
    let mut ratio = 0.0;
    let seeds = 6;
    for s in 0..seeds {
        let small = ols_grid(1, vec![10], vec![0.2], 1000, 100 + s)[0].std_error;
        let large = ols_grid(1, vec![10], vec![0.2], 2000, 100 + s)[0].std_error;
        ratio += large / small / seeds as f64;
    }
    assert!(
        (ratio - std::f64::consts::FRAC_1_SQRT_2).abs() < 0.08,
        "SE ratio {ratio}"
    );
}

#[test]
fn noiseless_ols_cells_are_exact() {
    for d in [1, 5] {
        let c = &ols_grid(d, vec![10], vec![0.0], 500, 1)[0];
        assert_eq!(c.method, Method::Ols);
        assert!(c.mean_mse <= 1e-20, "d={d}: {}", c.mean_mse);
    }
}
