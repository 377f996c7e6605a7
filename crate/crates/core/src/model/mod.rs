//! The DeepOSets operator network.
//!
//! A prompt of `n` labelled examples is embedded example-by-example, passed
//! through a shared encoder, and mean-pooled into a fixed-width summary. The
//! branch network turns that summary into `p` expansion coefficients; the trunk
//! network turns a query point into `p` basis values. The prediction is their
//! dot product plus a scalar bias:
//!
//! ```text
//! ŷ(x_q) = Σ_k b_k(prompt) · t_k(x_q) + b0
//! ```
//!
//! The branch output depends only on the prompt, so it can be computed once
//! ([`BranchCache`]) and reused for any number of queries at a per-query cost
//! that does not grow with `n`.

mod config;
mod prompt;

use std::ops::Range;

use ndarray::{s, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use config::{preset_config, ModelConfig, Preset};
pub use prompt::Prompt;

use crate::error::{Error, Result};
use crate::nn::{
    Activation, DenseLayer, DenseNet, GradientTape, LayerSpec, NetSpec, Parameters, Trace,
};
use crate::rng::derive_seed;

/// Branch coefficients for one fixed prompt, plus the output bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchCache {
    pub coefficients: Vec<f64>,
    pub b0: f64,
}

impl BranchCache {
    pub fn len(&self) -> usize {
        self.coefficients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeepOSetsModel {
    config: ModelConfig,
    x_embed: DenseNet,
    y_embed: DenseNet,
    encoder: DenseNet,
    branch: DenseNet,
    trunk: DenseNet,
    b0: f64,
}

/// Gradients for every trainable parameter of a [`DeepOSetsModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub x_embed: GradientTape,
    pub y_embed: GradientTape,
    pub encoder: GradientTape,
    pub branch: GradientTape,
    pub trunk: GradientTape,
    pub b0: f64,
}

impl ModelGrads {
    pub fn zeros_for(model: &DeepOSetsModel) -> Self {
        Self {
            x_embed: model.x_embed.tape(),
            y_embed: model.y_embed.tape(),
            encoder: model.encoder.tape(),
            branch: model.branch.tape(),
            trunk: model.trunk.tape(),
            b0: 0.0,
        }
    }

    pub fn merge(&mut self, other: &ModelGrads) -> Result<()> {
        self.x_embed.merge(&other.x_embed)?;
        self.y_embed.merge(&other.y_embed)?;
        self.encoder.merge(&other.encoder)?;
        self.branch.merge(&other.branch)?;
        self.trunk.merge(&other.trunk)?;
        self.b0 += other.b0;
        Ok(())
    }

    pub fn zero(&mut self) {
        self.x_embed.zero();
        self.y_embed.zero();
        self.encoder.zero();
        self.branch.zero();
        self.trunk.zero();
        self.b0 = 0.0;
    }
}

impl Parameters for ModelGrads {
    fn param_slices(&self) -> Vec<&[f64]> {
        let mut v = self.x_embed.param_slices();
        v.extend(self.y_embed.param_slices());
        v.extend(self.encoder.param_slices());
        v.extend(self.branch.param_slices());
        v.extend(self.trunk.param_slices());
        v.push(std::slice::from_ref(&self.b0));
        v
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.x_embed.param_slices_mut();
        v.extend(self.y_embed.param_slices_mut());
        v.extend(self.encoder.param_slices_mut());
        v.extend(self.branch.param_slices_mut());
        v.extend(self.trunk.param_slices_mut());
        v.push(std::slice::from_mut(&mut self.b0));
        v
    }
}

impl Parameters for DeepOSetsModel {
    fn param_slices(&self) -> Vec<&[f64]> {
        let mut v = self.x_embed.param_slices();
        v.extend(self.y_embed.param_slices());
        v.extend(self.encoder.param_slices());
        v.extend(self.branch.param_slices());
        v.extend(self.trunk.param_slices());
        v.push(std::slice::from_ref(&self.b0));
        v
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.x_embed.param_slices_mut();
        v.extend(self.y_embed.param_slices_mut());
        v.extend(self.encoder.param_slices_mut());
        v.extend(self.branch.param_slices_mut());
        v.extend(self.trunk.param_slices_mut());
        v.push(std::slice::from_mut(&mut self.b0));
        v
    }
}

/// One prompt with the query points to predict for it (row-major, `m × d`).
#[derive(Debug, Clone, Copy)]
pub struct Episode<'a> {
    pub prompt: &'a Prompt,
    pub queries: &'a [f64],
}

/// Recorded activations of a batched forward pass over several episodes.
#[derive(Debug, Clone)]
pub struct BatchTrace {
    example_rows: Vec<Range<usize>>,
    query_task: Vec<usize>,
    x_embed: Trace,
    y_embed: Trace,
    /// Encoder layers applied per example.
    encoder_body: Trace,
    /// Trailing linear encoder layer, applied after pooling.
    encoder_head: Trace,
    branch: Trace,
    trunk: Trace,
    predictions: Vec<f64>,
}

impl BatchTrace {
    pub fn predictions(&self) -> &[f64] {
        &self.predictions
    }

    /// Mean-pooled encoder outputs, one row per episode.
    pub fn pooled(&self) -> &Array2<f64> {
        self.branch.input()
    }
}

fn embedding_spec(input_dim: usize, width: usize) -> NetSpec {
    NetSpec(vec![LayerSpec::new(input_dim, width, Activation::Identity)])
}

impl DeepOSetsModel {
    /// Random initialization; every subnetwork gets its own seed derived from
    /// `seed`. The output bias starts at zero.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let d = config.input_dim;
        let e = config.embed_width;
        Ok(Self {
            x_embed: DenseNet::init(&embedding_spec(d, e), derive_seed(seed, 1))?,
            y_embed: DenseNet::init(&embedding_spec(d, e), derive_seed(seed, 2))?,
            encoder: DenseNet::init(&config.encoder, derive_seed(seed, 3))?,
            branch: DenseNet::init(&config.branch, derive_seed(seed, 4))?,
            trunk: DenseNet::init(&config.trunk, derive_seed(seed, 5))?,
            b0: 0.0,
            config,
        })
    }

    /// All weights and biases zero.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let d = config.input_dim;
        let e = config.embed_width;
        Ok(Self {
            x_embed: DenseNet::zeros(&embedding_spec(d, e))?,
            y_embed: DenseNet::zeros(&embedding_spec(d, e))?,
            encoder: DenseNet::zeros(&config.encoder)?,
            branch: DenseNet::zeros(&config.branch)?,
            trunk: DenseNet::zeros(&config.trunk)?,
            b0: 0.0,
            config,
        })
    }

    pub fn from_parts(
        config: ModelConfig,
        x_embed: DenseLayer,
        y_embed: DenseLayer,
        encoder: DenseNet,
        branch: DenseNet,
        trunk: DenseNet,
        b0: f64,
    ) -> Result<Self> {
        config.validate()?;
        let d = config.input_dim;
        let e = config.embed_width;
        let check = |name: &str, got: NetSpec, want: &NetSpec| {
            if &got == want {
                Ok(())
            } else {
                Err(Error::Shape(format!(
                    "{name} does not match the model config"
                )))
            }
        };
        let x_embed = DenseNet::from_layers(vec![x_embed])?;
        let y_embed = DenseNet::from_layers(vec![y_embed])?;
        check("x embedding", x_embed.spec(), &embedding_spec(d, e))?;
        check("y embedding", y_embed.spec(), &embedding_spec(d, e))?;
        check("encoder", encoder.spec(), &config.encoder)?;
        check("branch", branch.spec(), &config.branch)?;
        check("trunk", trunk.spec(), &config.trunk)?;
        Ok(Self {
            config,
            x_embed,
            y_embed,
            encoder,
            branch,
            trunk,
            b0,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn input_dim(&self) -> usize {
        self.config.input_dim
    }

    pub fn x_embedding(&self) -> &DenseLayer {
        &self.x_embed.layers()[0]
    }

    pub fn y_embedding(&self) -> &DenseLayer {
        &self.y_embed.layers()[0]
    }

    pub fn encoder(&self) -> &DenseNet {
        &self.encoder
    }

    pub fn branch(&self) -> &DenseNet {
        &self.branch
    }

    pub fn trunk(&self) -> &DenseNet {
        &self.trunk
    }

    pub fn b0(&self) -> f64 {
        self.b0
    }

    pub fn set_b0(&mut self, b0: f64) {
        self.b0 = b0;
    }

    pub fn branch_mut(&mut self) -> &mut DenseNet {
        &mut self.branch
    }

    pub fn trunk_mut(&mut self) -> &mut DenseNet {
        &mut self.trunk
    }

    pub fn encoder_mut(&mut self) -> &mut DenseNet {
        &mut self.encoder
    }

    pub fn parameter_count(&self) -> usize {
        Parameters::parameter_count(self)
    }

    fn check_prompt(&self, prompt: &Prompt) -> Result<()> {
        if prompt.dim() != self.config.input_dim {
            return Err(Error::InvalidPrompt(format!(
                "prompt examples have dimension {}, model expects {}",
                prompt.dim(),
                self.config.input_dim
            )));
        }
        Ok(())
    }

    fn check_query(&self, x_query: &[f64]) -> Result<()> {
        if x_query.len() != self.config.input_dim {
            return Err(Error::DimensionMismatch {
                layer: 0,
                expected: self.config.input_dim,
                got: x_query.len(),
            });
        }
        Ok(())
    }

    /// Input rows and zero-padded label rows, in canonical example order.
    fn example_matrices(
        &self,
        prompts: &[&Prompt],
    ) -> (Array2<f64>, Array2<f64>, Vec<Range<usize>>) {
        let d = self.config.input_dim;
        let total: usize = prompts.iter().map(|p| p.len()).sum();
        let mut xs = Array2::zeros((total, d));
        let mut ys = Array2::zeros((total, d));
        let mut ranges = Vec::with_capacity(prompts.len());
        let mut row = 0;
        for p in prompts {
            let start = row;
            for i in p.canonical_order() {
                xs.row_mut(row)
                    .as_slice_mut()
                    .expect("standard layout")
                    .copy_from_slice(p.x(i));
                ys[[row, 0]] = p.y(i);
                row += 1;
            }
            ranges.push(start..row);
        }
        (xs, ys, ranges)
    }

    fn embed(&self, x_out: &Array2<f64>, y_out: &Array2<f64>) -> Array2<f64> {
        let e = self.config.embed_width;
        let mut joined = Array2::zeros((x_out.nrows(), 2 * e));
        joined.slice_mut(s![.., ..e]).assign(x_out);
        joined.slice_mut(s![.., e..]).assign(y_out);
        joined
    }

    /// Layers before this index run on every example; the rest run once on
    /// the pooled row. A trailing identity layer commutes with the mean, so
    /// pooling first gives the same function at a fraction of the cost.
    fn encoder_split(&self) -> usize {
        let layers = self.encoder.layers();
        match layers.last() {
            Some(l) if l.activation() == Activation::Identity => layers.len() - 1,
            _ => layers.len(),
        }
    }

    /// Compensated (Neumaier) column sums, so a prompt and its k-fold copy
    /// pool to the same mean up to an ulp or so.
    fn mean_pool(encoded: &Array2<f64>, ranges: &[Range<usize>]) -> Array2<f64> {
        let width = encoded.ncols();
        let mut pooled = Array2::zeros((ranges.len(), width));
        let mut sum = vec![0.0; width];
        let mut comp = vec![0.0; width];
        for (t, r) in ranges.iter().enumerate() {
            sum.fill(0.0);
            comp.fill(0.0);
            for i in r.clone() {
                for ((s, c), &v) in sum.iter_mut().zip(comp.iter_mut()).zip(encoded.row(i)) {
                    let next = *s + v;
                    *c += if s.abs() >= v.abs() {
                        (*s - next) + v
                    } else {
                        (v - next) + *s
                    };
                    *s = next;
                }
            }
            let n = r.len() as f64;
            for (out, (s, c)) in pooled.row_mut(t).iter_mut().zip(sum.iter().zip(&comp)) {
                *out = (s + c) / n;
            }
        }
        pooled
    }

    /// Mean of the per-example encodings. Cost is linear in the prompt size.
    pub fn encode_prompt(&self, prompt: &Prompt) -> Result<Vec<f64>> {
        self.check_prompt(prompt)?;
        let (xs, ys, ranges) = self.example_matrices(&[prompt]);
        let ex = self.x_embed.forward_batch(xs.view())?;
        let ey = self.y_embed.forward_batch(ys.view())?;
        let split = self.encoder_split();
        let mut h = self.embed(&ex, &ey);
        for layer in &self.encoder.layers()[..split] {
            h = layer.forward_batch(h.view());
        }
        let mut pooled = Self::mean_pool(&h, &ranges);
        for layer in &self.encoder.layers()[split..] {
            pooled = layer.forward_batch(pooled.view());
        }
        Ok(pooled.row(0).to_vec())
    }

    pub fn branch_features(&self, pooled: &[f64]) -> Result<BranchCache> {
        Ok(BranchCache {
            coefficients: self.branch.forward(pooled)?,
            b0: self.b0,
        })
    }

    /// Encodes `prompt` once so queries can be answered with [`predict`].
    ///
    /// [`predict`]: DeepOSetsModel::predict
    pub fn cache(&self, prompt: &Prompt) -> Result<BranchCache> {
        self.branch_features(&self.encode_prompt(prompt)?)
    }

    /// Per-query prediction from a cached branch; no per-example work.
    pub fn predict(&self, cache: &BranchCache, x_query: &[f64]) -> Result<f64> {
        self.check_query(x_query)?;
        if cache.len() != self.config.readout_width() {
            return Err(Error::Shape(format!(
                "cache has {} coefficients, model readout is {}",
                cache.len(),
                self.config.readout_width()
            )));
        }
        let basis = self.trunk.forward(x_query)?;
        Ok(dot(&cache.coefficients, &basis) + cache.b0)
    }

    /// Batched variant of [`predict`](DeepOSetsModel::predict) over `m × d`
    /// row-major queries.
    pub fn predict_batch(&self, cache: &BranchCache, queries: &[f64]) -> Result<Vec<f64>> {
        let d = self.config.input_dim;
        if !queries.len().is_multiple_of(d) {
            return Err(Error::Shape(format!(
                "{} query values is not a multiple of d={d}",
                queries.len()
            )));
        }
        if queries.is_empty() {
            return Ok(Vec::new());
        }
        let q = ndarray::ArrayView2::from_shape((queries.len() / d, d), queries)
            .map_err(|e| Error::Shape(e.to_string()))?;
        let basis = self.trunk.forward_batch(q)?;
        Ok(basis
            .rows()
            .into_iter()
            .map(|row| {
                dot(
                    &cache.coefficients,
                    row.as_slice().expect("standard layout"),
                ) + cache.b0
            })
            .collect())
    }

    pub fn predict_full(&self, prompt: &Prompt, x_query: &[f64]) -> Result<f64> {
        self.check_query(x_query)?;
        let cache = self.cache(prompt)?;
        self.predict(&cache, x_query)
    }

    /// Batched forward pass over several episodes, recording everything
    /// needed by [`backward`](DeepOSetsModel::backward).
    pub fn forward_traced(&self, episodes: &[Episode<'_>]) -> Result<BatchTrace> {
        let d = self.config.input_dim;
        let prompts: Vec<&Prompt> = episodes.iter().map(|e| e.prompt).collect();
        for p in &prompts {
            self.check_prompt(p)?;
        }
        let mut query_task = Vec::new();
        let mut qdata = Vec::new();
        for (t, ep) in episodes.iter().enumerate() {
            if ep.queries.len() % d != 0 {
                return Err(Error::Shape(format!(
                    "episode {t}: {} query values is not a multiple of d={d}",
                    ep.queries.len()
                )));
            }
            query_task.extend(std::iter::repeat_n(t, ep.queries.len() / d));
            qdata.extend_from_slice(ep.queries);
        }
        let queries = Array2::from_shape_vec((query_task.len(), d), qdata)
            .map_err(|e| Error::Shape(e.to_string()))?;

        let (xs, ys, example_rows) = self.example_matrices(&prompts);
        let x_embed = self.x_embed.forward_traced(xs)?;
        let y_embed = self.y_embed.forward_traced(ys)?;
        let joined = self.embed(x_embed.output(), y_embed.output());
        let split = self.encoder_split();
        let encoder_body = self.encoder.forward_traced_span(0..split, joined);
        let pooled_hidden = Self::mean_pool(encoder_body.output(), &example_rows);
        let encoder_head = self
            .encoder
            .forward_traced_span(split..self.encoder.layers().len(), pooled_hidden);
        let branch = self.branch.forward_traced(encoder_head.output().clone())?;
        let trunk = self.trunk.forward_traced(queries)?;

        let b = branch.output();
        let t = trunk.output();
        let predictions = query_task
            .iter()
            .enumerate()
            .map(|(m, &task)| {
                dot(
                    b.row(task).as_slice().expect("standard layout"),
                    t.row(m).as_slice().expect("standard layout"),
                ) + self.b0
            })
            .collect();

        Ok(BatchTrace {
            example_rows,
            query_task,
            x_embed,
            y_embed,
            encoder_body,
            encoder_head,
            branch,
            trunk,
            predictions,
        })
    }

    /// Backpropagates `d_predictions` (one entry per query in the trace) into
    /// `grads`. The mean pooling hands `1/n` of each pooled gradient to every
    /// example path.
    pub fn backward(
        &self,
        trace: &BatchTrace,
        d_predictions: &[f64],
        grads: &mut ModelGrads,
    ) -> Result<()> {
        self.backward_to_examples(trace, d_predictions, grads)
            .map(|_| ())
    }

    /// As [`backward`](DeepOSetsModel::backward), also returning the gradient
    /// with respect to every example input `x_i` (rows in trace order).
    fn backward_to_examples(
        &self,
        trace: &BatchTrace,
        d_predictions: &[f64],
        grads: &mut ModelGrads,
    ) -> Result<Array2<f64>> {
        if d_predictions.len() != trace.predictions.len() {
            return Err(Error::TraceMismatch(format!(
                "{} upstream gradients for {} predictions",
                d_predictions.len(),
                trace.predictions.len()
            )));
        }
        let p = self.config.readout_width();
        let b = trace.branch.output();
        let t = trace.trunk.output();

        let mut d_branch = Array2::<f64>::zeros((trace.example_rows.len(), p));
        let mut d_trunk = Array2::<f64>::zeros((trace.query_task.len(), p));
        for (m, (&task, &g)) in trace.query_task.iter().zip(d_predictions).enumerate() {
            grads.b0 += g;
            d_branch.row_mut(task).scaled_add(g, &t.row(m));
            d_trunk.row_mut(m).scaled_add(g, &b.row(task));
        }

        self.trunk
            .backward(&trace.trunk, d_trunk.view(), &mut grads.trunk)?;
        let d_pooled = self
            .branch
            .backward(&trace.branch, d_branch.view(), &mut grads.branch)?;

        let split = trace.encoder_body.outputs_len();
        let d_pooled = self.encoder.backward_span(
            split,
            &trace.encoder_head,
            d_pooled.view(),
            &mut grads.encoder,
        );
        let mut d_encoded = Array2::<f64>::zeros(trace.encoder_body.output().raw_dim());
        for (task, rows) in trace.example_rows.iter().enumerate() {
            let scale = 1.0 / rows.len() as f64;
            let g = d_pooled.row(task);
            for i in rows.clone() {
                d_encoded.row_mut(i).scaled_add(scale, &g);
            }
        }
        let d_joined = self.encoder.backward_span(
            0,
            &trace.encoder_body,
            d_encoded.view(),
            &mut grads.encoder,
        );
        let e = self.config.embed_width;
        let d_x = self.x_embed.backward(
            &trace.x_embed,
            d_joined.slice(s![.., ..e]),
            &mut grads.x_embed,
        )?;
        self.y_embed.backward(
            &trace.y_embed,
            d_joined.slice(s![.., e..]),
            &mut grads.y_embed,
        )?;
        Ok(d_x)
    }

    /// Parameter gradients of `upstream · ŷ(prompt, x_query)`.
    pub fn model_gradients(
        &self,
        prompt: &Prompt,
        x_query: &[f64],
        upstream: f64,
    ) -> Result<ModelGrads> {
        self.check_query(x_query)?;
        let trace = self.forward_traced(&[Episode {
            prompt,
            queries: x_query,
        }])?;
        let mut grads = ModelGrads::zeros_for(self);
        self.backward(&trace, &[upstream], &mut grads)?;
        Ok(grads)
    }

    /// Gradient of `upstream · ŷ` with respect to each prompt input `x_i`
    /// (row-major, in the prompt's original order).
    pub fn prompt_input_gradients(
        &self,
        prompt: &Prompt,
        x_query: &[f64],
        upstream: f64,
    ) -> Result<Vec<f64>> {
        self.check_query(x_query)?;
        let trace = self.forward_traced(&[Episode {
            prompt,
            queries: x_query,
        }])?;
        let mut grads = ModelGrads::zeros_for(self);
        let d_x = self.backward_to_examples(&trace, &[upstream], &mut grads)?;
        let d = prompt.dim();
        let mut out = vec![0.0; prompt.len() * d];
        for (row, orig) in prompt.canonical_order().into_iter().enumerate() {
            out[orig * d..(orig + 1) * d]
                .copy_from_slice(d_x.row(row).as_slice().expect("standard layout"));
        }
        Ok(out)
    }

    /// Same model with every parameter replaced by values drawn from `rng`
    /// (uniform in ±`scale`). Used to build arbitrary non-trivial models.
    pub fn randomized(&self, seed: u64, scale: f64) -> Self {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = self.clone();
        for s in m.param_slices_mut() {
            for v in s.iter_mut() {
                *v = rng.random_range(-scale..scale);
            }
        }
        m
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig::new(1, 3, &[6], 5, &[4], &[4], 4)
    }

    fn prompt() -> Prompt {
        Prompt::from_pairs(&[([0.5], 1.0), ([-1.2], -2.4), ([2.0], 4.0)]).unwrap()
    }

    #[test]
    fn single_example_pool_is_its_encoding() {
        let m = DeepOSetsModel::init(tiny(), 1).unwrap();
        let one = Prompt::from_pairs(&[([0.3], 0.6)]).unwrap();
        let pooled = m.encode_prompt(&one).unwrap();
        let ex = m.x_embed.forward(&[0.3]).unwrap();
        let ey = m.y_embed.forward(&[0.6]).unwrap();
        let joined: Vec<f64> = ex.into_iter().chain(ey).collect();
        let h = m.encoder.forward(&joined).unwrap();
        for (a, b) in pooled.iter().zip(&h) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_branch_gives_zero_cache() {
        let m = DeepOSetsModel::zeros(tiny()).unwrap();
        let cache = m.branch_features(&[0.3, 1.0, -2.0, 0.0, 4.0]).unwrap();
        assert!(cache.coefficients.iter().all(|&v| v == 0.0));
        assert_eq!(cache.b0, 0.0);
    }

    #[test]
    fn zero_cache_predicts_bias() {
        let m = DeepOSetsModel::init(tiny(), 2).unwrap();
        let cache = BranchCache {
            coefficients: vec![0.0; 4],
            b0: 0.7,
        };
        for q in [-3.0, 0.0, 1.5] {
            assert_eq!(m.predict(&cache, &[q]).unwrap(), 0.7);
        }
    }

    #[test]
    fn one_hot_cache_selects_trunk_component() {
        let m = DeepOSetsModel::init(tiny(), 3).unwrap();
        for k in 0..4 {
            let mut coefficients = vec![0.0; 4];
            coefficients[k] = 1.0;
            let cache = BranchCache {
                coefficients,
                b0: 0.0,
            };
            let t = m.trunk.forward(&[0.8]).unwrap();
            assert_eq!(m.predict(&cache, &[0.8]).unwrap(), t[k]);
        }
    }

    #[test]
    fn predict_full_is_composition() {
        let m = DeepOSetsModel::init(tiny(), 4).unwrap();
        let p = prompt();
        let composed = m
            .predict(
                &m.branch_features(&m.encode_prompt(&p).unwrap()).unwrap(),
                &[0.9],
            )
            .unwrap();
        assert_eq!(m.predict_full(&p, &[0.9]).unwrap(), composed);
    }

    #[test]
    fn dimension_errors() {
        let m = DeepOSetsModel::init(tiny(), 5).unwrap();
        let p2 = Prompt::from_pairs(&[([0.5, 1.0], 1.0)]).unwrap();
        assert!(matches!(m.encode_prompt(&p2), Err(Error::InvalidPrompt(_))));
        assert!(m.branch_features(&[1.0]).is_err());
        let cache = m.cache(&prompt()).unwrap();
        assert!(m.predict(&cache, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn b0_gradient_equals_upstream() {
        let m = DeepOSetsModel::init(tiny(), 6).unwrap();
        let g = m.model_gradients(&prompt(), &[0.4], 0.37).unwrap();
        assert_eq!(g.b0, 0.37);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let m = DeepOSetsModel::init(tiny(), 7).unwrap();
        let g = m.model_gradients(&prompt(), &[0.4], 0.0).unwrap();
        assert!(g.param_slices().iter().all(|s| s.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn batch_predictions_match_single() {
        let m = DeepOSetsModel::init(tiny(), 8).unwrap();
        let p = prompt();
        let q = [0.1, -0.5, 2.2];
        let trace = m
            .forward_traced(&[Episode {
                prompt: &p,
                queries: &q,
            }])
            .unwrap();
        let cache = m.cache(&p).unwrap();
        let batch = m.predict_batch(&cache, &q).unwrap();
        for (i, &x) in q.iter().enumerate() {
            let single = m.predict(&cache, &[x]).unwrap();
            assert!((trace.predictions()[i] - single).abs() < 1e-13);
            assert!((batch[i] - single).abs() < 1e-13);
        }
    }
}
