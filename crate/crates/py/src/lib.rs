use std::path::PathBuf;

use ::deeposets::baseline;
use ::deeposets::checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
use ::deeposets::taskgen::{sample_batch, NoiseScale, TaskDistribution};
use ::deeposets::trainer::{self, TrainConfig};
use ::deeposets::{BranchCache, DeepOSetsModel, Preset, Prompt};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn err(e: ::deeposets::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn preset(name: &str) -> PyResult<Preset> {
    name.parse().map_err(err)
}

fn prompt(xs: Vec<Vec<f64>>, ys: Vec<f64>) -> PyResult<Prompt> {
    if xs.len() != ys.len() {
        return Err(PyValueError::new_err(format!(
            "got {} inputs but {} labels",
            xs.len(),
            ys.len()
        )));
    }
    let pairs: Vec<(Vec<f64>, f64)> = xs.into_iter().zip(ys).collect();
    Prompt::from_pairs(&pairs).map_err(err)
}

/// Precomputed branch coefficients for one prompt.
#[pyclass(name = "BranchCache", module = "deeposets_py")]
struct PyBranchCache {
    inner: BranchCache,
}

#[pymethods]
impl PyBranchCache {
    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

#[pyclass(name = "Model", module = "deeposets_py")]
struct PyModel {
    inner: DeepOSetsModel,
}

#[pymethods]
impl PyModel {
    /// Freshly initialized preset model ("d1" or "d5").
    #[new]
    #[pyo3(signature = (preset="d1", seed=0))]
    fn new(preset: &str, seed: u64) -> PyResult<Self> {
        let inner = DeepOSetsModel::init(self::preset(preset)?.config(), seed).map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let (inner, _) = load_checkpoint(&path).map_err(err)?;
        Ok(Self { inner })
    }

    #[pyo3(signature = (path, seed=0, iterations=0))]
    fn save(&self, path: PathBuf, seed: u64, iterations: u64) -> PyResult<()> {
        let meta = CheckpointMeta {
            seed,
            iterations,
            final_loss: None,
        };
        save_checkpoint(&self.inner, &meta, &path).map_err(err)
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }

    fn parameter_count(&self) -> usize {
        self.inner.parameter_count()
    }

    /// Encode a prompt once; `xs` is a list of input rows.
    fn cache(&self, xs: Vec<Vec<f64>>, ys: Vec<f64>) -> PyResult<PyBranchCache> {
        let inner = self.inner.cache(&prompt(xs, ys)?).map_err(err)?;
        Ok(PyBranchCache { inner })
    }

    fn predict(&self, cache: PyRef<'_, PyBranchCache>, x: Vec<f64>) -> PyResult<f64> {
        self.inner.predict(&cache.inner, &x).map_err(err)
    }

    fn predict_batch(
        &self,
        cache: PyRef<'_, PyBranchCache>,
        queries: Vec<Vec<f64>>,
    ) -> PyResult<Vec<f64>> {
        let flat: Vec<f64> = queries.concat();
        if queries.iter().any(|q| q.len() != self.inner.input_dim()) {
            return Err(PyValueError::new_err(
                "every query must have input_dim entries",
            ));
        }
        self.inner.predict_batch(&cache.inner, &flat).map_err(err)
    }

    fn predict_full(&self, xs: Vec<Vec<f64>>, ys: Vec<f64>, x: Vec<f64>) -> PyResult<f64> {
        self.inner.predict_full(&prompt(xs, ys)?, &x).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(input_dim={}, parameters={})",
            self.inner.input_dim(),
            self.inner.parameter_count()
        )
    }
}

/// One sampled regression task.
#[pyclass(name = "Task", module = "deeposets_py", get_all)]
struct PyTask {
    index: u64,
    weights: Vec<f64>,
    xs: Vec<Vec<f64>>,
    ys: Vec<f64>,
    queries: Vec<Vec<f64>>,
    targets: Vec<f64>,
}

#[pyfunction]
#[pyo3(signature = (dim, n, noise=0.0, count=1, seed=0, queries=1, start=0, noise_is_std=false))]
#[allow(clippy::too_many_arguments)]
fn sample_tasks(
    dim: usize,
    n: usize,
    noise: f64,
    count: usize,
    seed: u64,
    queries: usize,
    start: u64,
    noise_is_std: bool,
) -> PyResult<Vec<PyTask>> {
    let mut dist = TaskDistribution::new(dim, n, noise, queries, seed);
    if noise_is_std {
        dist.noise_scale = NoiseScale::Std;
    }
    let tasks = sample_batch(&dist, start, count).map_err(err)?;
    Ok(tasks
        .into_iter()
        .map(|t| PyTask {
            index: t.index,
            xs: t.prompt.xs().chunks(dim).map(<[f64]>::to_vec).collect(),
            ys: t.prompt.ys().to_vec(),
            queries: t.queries.chunks(dim).map(<[f64]>::to_vec).collect(),
            weights: t.weights,
            targets: t.targets,
        })
        .collect())
}

/// Minimum-norm least-squares coefficients for a prompt.
#[pyfunction]
fn ols_fit(xs: Vec<Vec<f64>>, ys: Vec<f64>) -> PyResult<Vec<f64>> {
    Ok(baseline::ols_fit(&prompt(xs, ys)?).coefficients)
}

/// Train a preset model; returns the model and per-iteration losses.
#[pyfunction]
#[pyo3(signature = (preset="d1", iterations=1000, seed=0, batch_size=64, noise=0.0))]
fn train(
    py: Python<'_>,
    preset: &str,
    iterations: u64,
    seed: u64,
    batch_size: usize,
    noise: f64,
) -> PyResult<(PyModel, Vec<f64>)> {
    let mut cfg = TrainConfig::preset(self::preset(preset)?, seed);
    cfg.iterations = iterations;
    cfg.batch_size = batch_size;
    cfg.tasks.noise = noise;
    cfg.log_every = 0;
    let (inner, log) = py.detach(|| trainer::train(cfg)).map_err(err)?;
    Ok((PyModel { inner }, log.losses))
}

#[pymodule]
fn deeposets_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_class::<PyBranchCache>()?;
    m.add_class::<PyTask>()?;
    m.add_function(wrap_pyfunction!(sample_tasks, m)?)?;
    m.add_function(wrap_pyfunction!(ols_fit, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    Ok(())
}
