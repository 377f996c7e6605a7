use std::ops::Range;

use ndarray::{Array1, Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Activation, DenseLayer, LayerSpec, Parameters};
use crate::error::{Error, Result};

/// Ordered layer shapes for a [`DenseNet`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NetSpec(pub Vec<LayerSpec>);

impl NetSpec {
    /// Fully connected chain `input → hidden… → output`, with `hidden_act` on
    /// every hidden layer and `output_act` on the last one.
    pub fn mlp(
        input: usize,
        hidden: &[usize],
        output: usize,
        hidden_act: Activation,
        output_act: Activation,
    ) -> Self {
        let mut widths = Vec::with_capacity(hidden.len() + 2);
        widths.push(input);
        widths.extend_from_slice(hidden);
        widths.push(output);
        let last = widths.len() - 2;
        NetSpec(
            widths
                .windows(2)
                .enumerate()
                .map(|(i, w)| {
                    let act = if i == last { output_act } else { hidden_act };
                    LayerSpec::new(w[0], w[1], act)
                })
                .collect(),
        )
    }

    pub fn input_dim(&self) -> usize {
        self.0.first().map_or(0, |l| l.in_dim)
    }

    pub fn output_dim(&self) -> usize {
        self.0.last().map_or(0, |l| l.out_dim)
    }

    pub fn parameter_count(&self) -> usize {
        self.0.iter().map(LayerSpec::parameter_count).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.0.is_empty() {
            return Err(Error::InvalidSpec(
                "network needs at least one layer".into(),
            ));
        }
        for (i, l) in self.0.iter().enumerate() {
            if l.in_dim == 0 || l.out_dim == 0 {
                return Err(Error::InvalidSpec(format!(
                    "layer {i} has zero size ({}→{})",
                    l.in_dim, l.out_dim
                )));
            }
        }
        for (i, pair) in self.0.windows(2).enumerate() {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::InvalidSpec(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    pair[0].out_dim,
                    i + 1,
                    pair[1].in_dim
                )));
            }
        }
        Ok(())
    }
}

/// A chain of dense layers.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    layers: Vec<DenseLayer>,
}

/// Activations recorded by [`DenseNet::forward_traced`], consumed by
/// [`DenseNet::backward`].
#[derive(Debug, Clone)]
pub struct Trace {
    input: Array2<f64>,
    outputs: Vec<Array2<f64>>,
}

impl Trace {
    pub fn input(&self) -> &Array2<f64> {
        &self.input
    }

    pub fn output(&self) -> &Array2<f64> {
        self.outputs.last().unwrap_or(&self.input)
    }

    pub fn batch_size(&self) -> usize {
        self.input.nrows()
    }

    pub(crate) fn outputs_len(&self) -> usize {
        self.outputs.len()
    }
}

/// Per-parameter gradient buffers, shape-congruent with one [`DenseNet`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientTape {
    pub(crate) weights: Vec<Array2<f64>>,
    pub(crate) biases: Vec<Array1<f64>>,
}

impl GradientTape {
    pub fn for_net(net: &DenseNet) -> Self {
        Self {
            weights: net
                .layers
                .iter()
                .map(|l| Array2::zeros(l.weights().raw_dim()))
                .collect(),
            biases: net
                .layers
                .iter()
                .map(|l| Array1::zeros(l.out_dim()))
                .collect(),
        }
    }

    pub fn zero(&mut self) {
        self.weights.iter_mut().for_each(|w| w.fill(0.0));
        self.biases.iter_mut().for_each(|b| b.fill(0.0));
    }

    pub fn weight_grad(&self, layer: usize) -> &Array2<f64> {
        &self.weights[layer]
    }

    pub fn bias_grad(&self, layer: usize) -> &Array1<f64> {
        &self.biases[layer]
    }

    /// Adds another tape of the same shape into this one.
    pub fn merge(&mut self, other: &GradientTape) -> Result<()> {
        if !self.congruent(other) {
            return Err(Error::Shape("gradient tapes differ in shape".into()));
        }
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
        Ok(())
    }

    fn congruent(&self, other: &GradientTape) -> bool {
        self.weights.len() == other.weights.len()
            && self
                .weights
                .iter()
                .zip(&other.weights)
                .all(|(a, b)| a.dim() == b.dim())
    }

    fn matches(&self, net: &DenseNet) -> bool {
        self.weights.len() == net.layers.len()
            && self
                .weights
                .iter()
                .zip(&net.layers)
                .all(|(w, l)| w.dim() == l.weights().dim())
    }
}

impl DenseNet {
    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        let spec = NetSpec(layers.iter().map(DenseLayer::spec).collect());
        spec.validate()?;
        Ok(Self { layers })
    }

    /// Deterministic initialization from `seed`; biases start at zero.
    pub fn init(spec: &NetSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = spec
            .0
            .iter()
            .map(|&l| DenseLayer::init(l, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layers })
    }

    pub fn zeros(spec: &NetSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            layers: spec.0.iter().map(|&l| DenseLayer::zeros(l)).collect(),
        })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn spec(&self) -> NetSpec {
        NetSpec(self.layers.iter().map(DenseLayer::spec).collect())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::parameter_count).sum()
    }

    pub fn tape(&self) -> GradientTape {
        GradientTape::for_net(self)
    }

    /// Evaluates the network on a single input vector.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                layer: 0,
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        let mut cur = input.to_vec();
        let mut next = Vec::new();
        for layer in &self.layers {
            layer.forward_into(&cur, &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    fn check_batch_input(&self, input: &ArrayView2<'_, f64>) -> Result<()> {
        if input.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                layer: 0,
                expected: self.input_dim(),
                got: input.ncols(),
            });
        }
        Ok(())
    }

    /// Row-batched evaluation without recording activations.
    pub fn forward_batch(&self, input: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_batch_input(&input)?;
        let mut cur = self.layers[0].forward_batch(input);
        for layer in &self.layers[1..] {
            cur = layer.forward_batch(cur.view());
        }
        Ok(cur)
    }

    /// Row-batched evaluation that keeps every layer's output for [`backward`].
    ///
    /// [`backward`]: DenseNet::backward
    pub fn forward_traced(&self, input: Array2<f64>) -> Result<Trace> {
        self.check_batch_input(&input.view())?;
        Ok(self.forward_traced_span(0..self.layers.len(), input))
    }

    /// Traced evaluation of layers `span` only; `input` feeds layer
    /// `span.start`. An empty span yields a trace whose output is the input.
    pub(crate) fn forward_traced_span(&self, span: Range<usize>, input: Array2<f64>) -> Trace {
        let mut outputs: Vec<Array2<f64>> = Vec::with_capacity(span.len());
        for layer in &self.layers[span] {
            let next = match outputs.last() {
                Some(prev) => layer.forward_batch(prev.view()),
                None => layer.forward_batch(input.view()),
            };
            outputs.push(next);
        }
        Trace { input, outputs }
    }

    /// Reverse-mode pass: accumulates `∂loss/∂params` into `tape` and returns
    /// `∂loss/∂input`, one row per traced sample.
    pub fn backward(
        &self,
        trace: &Trace,
        upstream: ArrayView2<'_, f64>,
        tape: &mut GradientTape,
    ) -> Result<Array2<f64>> {
        if trace.outputs.len() != self.layers.len() {
            return Err(Error::TraceMismatch(format!(
                "trace has {} layers, network has {}",
                trace.outputs.len(),
                self.layers.len()
            )));
        }
        for (i, (out, layer)) in trace.outputs.iter().zip(&self.layers).enumerate() {
            if out.ncols() != layer.out_dim() || out.nrows() != trace.batch_size() {
                return Err(Error::TraceMismatch(format!(
                    "layer {i} trace has shape {:?}",
                    out.dim()
                )));
            }
        }
        if trace.input.ncols() != self.input_dim() {
            return Err(Error::TraceMismatch("trace input width differs".into()));
        }
        if upstream.dim() != trace.output().dim() {
            return Err(Error::TraceMismatch(format!(
                "upstream gradient has shape {:?}, output has {:?}",
                upstream.dim(),
                trace.output().dim()
            )));
        }
        if !tape.matches(self) {
            return Err(Error::Shape("gradient tape does not match network".into()));
        }

        Ok(self.backward_span(0, trace, upstream, tape))
    }

    /// Backward pass through a trace made by [`forward_traced_span`] starting
    /// at layer `start`. Shapes are the caller's responsibility.
    ///
    /// [`forward_traced_span`]: DenseNet::forward_traced_span
    pub(crate) fn backward_span(
        &self,
        start: usize,
        trace: &Trace,
        upstream: ArrayView2<'_, f64>,
        tape: &mut GradientTape,
    ) -> Array2<f64> {
        let mut grad = upstream.to_owned();
        for k in (0..trace.outputs.len()).rev() {
            let i = start + k;
            let input = if k == 0 {
                trace.input.view()
            } else {
                trace.outputs[k - 1].view()
            };
            grad = self.layers[i].backward_batch(
                input,
                trace.outputs[k].view(),
                grad.view(),
                &mut tape.weights[i],
                &mut tape.biases[i],
            );
        }
        grad
    }
}

impl Parameters for DenseNet {
    fn param_slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for l in &self.layers {
            out.push(l.weights().as_slice().expect("standard layout"));
            out.push(l.bias().as_slice().expect("standard layout"));
        }
        out
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for l in &mut self.layers {
            let (w, b) = (&mut l.weights, &mut l.bias);
            out.push(w.as_slice_mut().expect("standard layout"));
            out.push(b.as_slice_mut().expect("standard layout"));
        }
        out
    }
}

impl Parameters for GradientTape {
    fn param_slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(self.weights.len() * 2);
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.push(w.as_slice().expect("standard layout"));
            out.push(b.as_slice().expect("standard layout"));
        }
        out
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(self.weights.len() * 2);
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            out.push(w.as_slice_mut().expect("standard layout"));
            out.push(b.as_slice_mut().expect("standard layout"));
        }
        out
    }
}
