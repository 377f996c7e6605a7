//! SVG figures: MSE against n, MSE against noise, latency against n.

use std::path::Path;

use plotters::prelude::*;

use super::eval::Method;
use super::latency::LatencyReport;
use super::report::ExperimentReport;
use crate::error::{Error, Result};

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

const PALETTE: [RGBColor; 4] = [RED, BLUE, RGBColor(0, 140, 0), RGBColor(200, 120, 0)];

fn plot_err<E: std::fmt::Display>(e: E) -> Error {
    Error::Bench(format!("plot: {e}"))
}

/// Line chart with a logarithmic y axis. Non-positive y values cannot be shown
/// on that axis and are dropped.
pub fn line_chart(
    path: &Path,
    title: &str,
    x_desc: &str,
    y_desc: &str,
    series: &[Series],
) -> Result<()> {
    let pts: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|s| s.points.iter().copied())
        .filter(|&(x, y)| x.is_finite() && y.is_finite() && y > 0.0)
        .collect();
    if pts.is_empty() {
        return Err(Error::Bench(format!("nothing to plot for `{title}`")));
    }
    let (mut x0, mut x1) = pts
        .iter()
        .fold((f64::MAX, f64::MIN), |(a, b), p| (a.min(p.0), b.max(p.0)));
    let (y0, y1) = pts
        .iter()
        .fold((f64::MAX, f64::MIN), |(a, b), p| (a.min(p.1), b.max(p.1)));
    if x0 == x1 {
        x0 -= 0.5;
        x1 += 0.5;
    }

    let root = SVGBackend::new(path, (800, 560)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(45)
        .y_label_area_size(75)
        .build_cartesian_2d(x0..x1, (y0 / 1.5..y1 * 1.5).log_scale())
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc(x_desc)
        .y_desc(y_desc)
        .y_label_formatter(&|v| format!("{v:.1e}"))
        .draw()
        .map_err(plot_err)?;
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let data: Vec<(f64, f64)> = s
            .points
            .iter()
            .copied()
            .filter(|p| p.1 > 0.0 && p.1.is_finite())
            .collect();
        chart
            .draw_series(LineSeries::new(data.clone(), color.stroke_width(2)))
            .map_err(plot_err)?
            .label(s.label.clone())
            .legend(move |(x, y)| {
                PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2))
            });
        chart
            .draw_series(data.into_iter().map(|p| Circle::new(p, 3, color.filled())))
            .map_err(plot_err)?;
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}

fn method_series<F>(
    report: &ExperimentReport,
    keep: F,
    x: fn(&super::eval::CellResult) -> f64,
) -> Vec<Series>
where
    F: Fn(&super::eval::CellResult) -> bool,
{
    report
        .methods()
        .into_iter()
        .map(|m: Method| {
            let mut points: Vec<(f64, f64)> = report
                .cells
                .iter()
                .filter(|c| c.method == m && keep(c))
                .map(|c| (x(c), c.mean_mse))
                .collect();
            points.sort_by(|a, b| a.0.total_cmp(&b.0));
            Series {
                label: m.to_string(),
                points,
            }
        })
        .collect()
}

pub fn plot_mse_vs_n(report: &ExperimentReport, d: usize, noise: f64, path: &Path) -> Result<()> {
    let series = method_series(report, |c| c.d == d && c.noise == noise, |c| c.n as f64);
    line_chart(
        path,
        &format!("MSE vs n (d={d}, noise={noise})"),
        "number of in-context examples n",
        "MSE",
        &series,
    )
}

pub fn plot_mse_vs_noise(report: &ExperimentReport, d: usize, n: usize, path: &Path) -> Result<()> {
    let series = method_series(report, |c| c.d == d && c.n == n, |c| c.noise);
    line_chart(
        path,
        &format!("MSE vs noise (d={d}, n={n})"),
        "noise level",
        "MSE",
        &series,
    )
}

pub fn plot_latency(report: &LatencyReport, path: &Path) -> Result<()> {
    let pick = |f: fn(&super::latency::LatencyRow) -> f64| -> Vec<(f64, f64)> {
        report.rows.iter().map(|r| (r.n as f64, f(r))).collect()
    };
    let series = [
        Series {
            label: "encode prompt".into(),
            points: pick(|r| r.encode.median_ms),
        },
        Series {
            label: "first query".into(),
            points: pick(|r| r.first_query.median_ms),
        },
        Series {
            label: "cached query".into(),
            points: pick(|r| r.cached_query.median_ms),
        },
    ];
    line_chart(
        path,
        "Inference time vs n",
        "number of in-context examples n",
        "median time (ms)",
        &series,
    )
}

/// Writes every figure the report supports into `dir`; returns the paths.
pub fn plot_report(report: &ExperimentReport, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut written = Vec::new();
    let mut dims: Vec<usize> = report.cells.iter().map(|c| c.d).collect();
    dims.sort_unstable();
    dims.dedup();
    for d in dims {
        let cells: Vec<_> = report.cells.iter().filter(|c| c.d == d).collect();
        let mut ns: Vec<usize> = cells.iter().map(|c| c.n).collect();
        ns.sort_unstable();
        ns.dedup();
        let mut noises: Vec<f64> = cells.iter().map(|c| c.noise).collect();
        noises.sort_by(f64::total_cmp);
        noises.dedup();
        if ns.len() > 1 {
            for &s in &noises {
                let p = dir.join(format!("mse_vs_n_d{d}_noise{s}.svg"));
                plot_mse_vs_n(report, d, s, &p)?;
                written.push(p);
            }
        }
        if noises.len() > 1 {
            for &n in &ns {
                let p = dir.join(format!("mse_vs_noise_d{d}_n{n}.svg"));
                plot_mse_vs_noise(report, d, n, &p)?;
                written.push(p);
            }
        }
    }
    Ok(written)
}
