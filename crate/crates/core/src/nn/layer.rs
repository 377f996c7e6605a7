use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Activation;
use crate::error::{Error, Result};

/// Shape and activation of one dense layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            in_dim,
            out_dim,
            activation,
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.out_dim * (self.in_dim + 1)
    }
}

/// Affine map followed by an element-wise activation: `y = act(W x + b)`.
///
/// `weights` is stored `[out_dim, in_dim]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub(crate) weights: Array2<f64>,
    pub(crate) bias: Array1<f64>,
    activation: Activation,
}

impl DenseLayer {
    pub fn new(weights: Array2<f64>, bias: Array1<f64>, activation: Activation) -> Result<Self> {
        if weights.nrows() != bias.len() {
            return Err(Error::Shape(format!(
                "weights have {} rows but bias has {} entries",
                weights.nrows(),
                bias.len()
            )));
        }
        if weights.nrows() == 0 || weights.ncols() == 0 {
            return Err(Error::InvalidSpec("zero-size layer".into()));
        }
        // Keep standard layout so parameters can be exposed as flat slices.
        let weights = weights.as_standard_layout().into_owned();
        Ok(Self {
            weights,
            bias,
            activation,
        })
    }

    pub fn zeros(spec: LayerSpec) -> Self {
        Self {
            weights: Array2::zeros((spec.out_dim, spec.in_dim)),
            bias: Array1::zeros(spec.out_dim),
            activation: spec.activation,
        }
    }

    /// Variance-scaled uniform initialization with zero bias.
    ///
    /// SELU layers use `±sqrt(3/in)` (unit-variance propagation); all others use
    /// the Glorot bound `±sqrt(6/(in+out))`.
    pub fn init<R: Rng>(spec: LayerSpec, rng: &mut R) -> Result<Self> {
        if spec.in_dim == 0 || spec.out_dim == 0 {
            return Err(Error::InvalidSpec(format!(
                "zero-size layer {}→{}",
                spec.in_dim, spec.out_dim
            )));
        }
        let bound = match spec.activation {
            Activation::Selu => (3.0 / spec.in_dim as f64).sqrt(),
            _ => (6.0 / (spec.in_dim + spec.out_dim) as f64).sqrt(),
        };
        let weights = Array2::from_shape_simple_fn((spec.out_dim, spec.in_dim), || {
            rng.random_range(-bound..bound)
        });
        Ok(Self {
            weights,
            bias: Array1::zeros(spec.out_dim),
            activation: spec.activation,
        })
    }

    #[inline]
    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    #[inline]
    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }

    #[inline]
    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn spec(&self) -> LayerSpec {
        LayerSpec::new(self.in_dim(), self.out_dim(), self.activation)
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn bias(&self) -> &Array1<f64> {
        &self.bias
    }

    pub fn weights_mut(&mut self) -> &mut Array2<f64> {
        &mut self.weights
    }

    pub fn bias_mut(&mut self) -> &mut Array1<f64> {
        &mut self.bias
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// Single-vector evaluation. `out` is cleared and refilled.
    pub fn forward_into(&self, input: &[f64], out: &mut Vec<f64>) {
        debug_assert_eq!(input.len(), self.in_dim());
        out.clear();
        let w = self.weights.as_slice().expect("standard layout");
        let in_dim = self.in_dim();
        for (row, &b) in w.chunks_exact(in_dim).zip(self.bias.iter()) {
            let z = row.iter().zip(input).fold(b, |acc, (wi, xi)| acc + wi * xi);
            out.push(self.activation.apply(z));
        }
    }

    /// Row-batched evaluation: each row of `input` is one sample.
    pub fn forward_batch(&self, input: ArrayView2<'_, f64>) -> Array2<f64> {
        // Written into a row-major buffer so callers can rely on the layout.
        let mut z = Array2::zeros((input.nrows(), self.out_dim()));
        z.rows_mut()
            .into_iter()
            .for_each(|mut r| r.assign(&self.bias));
        general_mat_mul(1.0, &input, &self.weights.t(), 1.0, &mut z);
        if self.activation != Activation::Identity {
            let act = self.activation;
            z.mapv_inplace(|v| act.apply(v));
        }
        z
    }

    /// Backpropagates `upstream` (gradient w.r.t. this layer's output) given the
    /// layer's recorded `input` and `output`. Accumulates parameter gradients into
    /// `d_weights`/`d_bias` and returns the gradient w.r.t. the input.
    pub(crate) fn backward_batch(
        &self,
        input: ArrayView2<'_, f64>,
        output: ArrayView2<'_, f64>,
        upstream: ArrayView2<'_, f64>,
        d_weights: &mut Array2<f64>,
        d_bias: &mut Array1<f64>,
    ) -> Array2<f64> {
        let mut dz = upstream.to_owned();
        if self.activation != Activation::Identity {
            let act = self.activation;
            dz.zip_mut_with(&output, |g, &y| *g *= act.derivative_from_output(y));
        }
        general_mat_mul(1.0, &dz.t(), &input, 1.0, d_weights);
        *d_bias += &dz.sum_axis(Axis(0));
        dz.dot(&self.weights)
    }
}
