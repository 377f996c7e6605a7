//! Independent oracles shared by the integration tests. Nothing here calls
//! into the code paths it is used to check.
#![allow(dead_code)]

use deeposets::model::{DeepOSetsModel, ModelConfig};
use deeposets::nn::Parameters;
use deeposets::taskgen::{sample_batch, TaskDistribution, TaskSample};
use deeposets::trainer::loss_and_gradients;
use deeposets::Prompt;

/// Batch loss recomputed from scratch: per task, the mean squared error of
/// single-query predictions; then the mean over tasks.
pub fn reference_batch_loss(model: &DeepOSetsModel, tasks: &[TaskSample]) -> f64 {
    let mut total = 0.0;
    for t in tasks {
        let mut acc = 0.0;
        for j in 0..t.query_count() {
            let r = model.predict_full(&t.prompt, t.query(j)).unwrap() - t.targets[j];
            acc += r * r;
        }
        total += acc / t.query_count() as f64;
    }
    total / tasks.len() as f64
}

pub struct GradCheck {
    /// Worst relative error among gradients the difference quotient resolves.
    pub worst_relative: f64,
    pub worst_index: (usize, usize),
    pub checked: usize,
    /// Gradients too small for the quotient to resolve at the target
    /// tolerance; these must agree to within its round-off instead.
    pub below_resolution: usize,
    /// Parameters failing both the relative and the round-off test.
    pub violations: usize,
}

impl GradCheck {
    pub fn passed(&self, tol: f64) -> bool {
        self.worst_relative < tol && self.violations == 0
    }
}

/// Round-off of `(L(θ+h) − L(θ−h)) / 2h` in f64, with headroom for the
/// rounding accumulated through the forward pass.
fn quotient_noise(up: f64, down: f64, h: f64) -> f64 {
    16.0 * f64::EPSILON * up.abs().max(down.abs()) / h
}

/// Compares every analytic parameter gradient with a central difference of
/// step `h`. Where the gradient is large enough for the quotient to resolve
/// relative error `tol`, the error is `|a − n| / max(|a|, |n|)`; smaller ones
/// only have to agree to within the quotient's own round-off.
pub fn gradient_check(model: &DeepOSetsModel, tasks: &[TaskSample], h: f64, tol: f64) -> GradCheck {
    let weight = 1.0 / tasks.len() as f64;
    let (_, grads) = loss_and_gradients(model, tasks, weight).unwrap();
    let analytic: Vec<Vec<f64>> = grads.param_slices().iter().map(|s| s.to_vec()).collect();
    let mut probe = model.clone();
    let mut out = GradCheck {
        worst_relative: 0.0,
        worst_index: (0, 0),
        checked: 0,
        below_resolution: 0,
        violations: 0,
    };
    for (b, buf) in analytic.iter().enumerate() {
        for (i, &a) in buf.iter().enumerate() {
            let orig = probe.param_slices()[b][i];
            probe.param_slices_mut()[b][i] = orig + h;
            let up = reference_batch_loss(&probe, tasks);
            probe.param_slices_mut()[b][i] = orig - h;
            let down = reference_batch_loss(&probe, tasks);
            probe.param_slices_mut()[b][i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let noise = quotient_noise(up, down, h);
            let err = (a - numeric).abs();
            let scale = a.abs().max(numeric.abs());
            out.checked += 1;
            if scale * tol > noise {
                let rel = err / scale;
                if rel > out.worst_relative {
                    out.worst_relative = rel;
                    out.worst_index = (b, i);
                }
                if rel >= tol {
                    out.violations += 1;
                }
            } else {
                out.below_resolution += 1;
                if err > noise {
                    out.violations += 1;
                }
            }
        }
    }
    out
}

/// A small random configuration: d=1, every width in 1..=8.
pub fn small_config(widths: &[usize; 6], depth: usize) -> ModelConfig {
    let [e, h, p, bh, th, r] = *widths;
    let hidden: Vec<usize> = std::iter::repeat_n(h, depth).collect();
    ModelConfig::new(1, e, &hidden, p, &[bh], &[th], r)
}

/// Noiseless tasks for gradient checks, with a noisy-label variant so the
/// prompt labels are not exactly linear.
pub fn small_tasks(n: usize, queries: usize, seed: u64, count: usize) -> Vec<TaskSample> {
    let dist = TaskDistribution::new(1, n, 0.1, queries, seed);
    sample_batch(&dist, 0, count).unwrap()
}

/// Least squares through the origin for scalar inputs: Σxy / Σx².
pub fn ols_slope_1d(prompt: &Prompt) -> f64 {
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (x, y) in prompt.iter() {
        sxy += x[0] * y;
        sxx += x[0] * x[0];
    }
    sxy / sxx
}

/// Expected squared prediction error of homogeneous OLS at a fresh Gaussian
/// query, for Gaussian designs: σ² · d / (n − d − 1), valid for n > d + 1.
pub fn ols_expected_mse(noise_var: f64, d: usize, n: usize) -> f64 {
    noise_var * d as f64 / (n as f64 - d as f64 - 1.0)
}

/// R² of the least-squares line through the origin `y ≈ k·x`, and `k`.
pub fn origin_fit_r2(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let k = sxy / sxx;
    let mean = ys.iter().sum::<f64>() / ys.len() as f64;
    let ss_res: f64 = xs.iter().zip(ys).map(|(x, y)| (y - k * x).powi(2)).sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - mean).powi(2)).sum();
    (1.0 - ss_res / ss_tot, k)
}

pub fn relative_diff(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}
