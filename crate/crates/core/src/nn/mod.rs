//! Dense-network engine: layers, forward/backward passes, and Adam.
//!
//! Activations are batched row-wise (one sample per row) so a whole set of
//! prompt examples goes through each layer as a single matrix product.

mod activation;
mod adam;
mod layer;
mod net;

pub use activation::{Activation, SELU_ALPHA, SELU_LAMBDA};
pub use adam::{AdamConfig, AdamState};
pub use layer::{DenseLayer, LayerSpec};
pub use net::{DenseNet, GradientTape, NetSpec, Trace};

/// Anything that can expose its trainable values as an ordered list of flat
/// buffers. Parameters and their gradients must list buffers in the same order.
pub trait Parameters {
    fn param_slices(&self) -> Vec<&[f64]>;
    fn param_slices_mut(&mut self) -> Vec<&mut [f64]>;

    fn parameter_count(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    fn all_finite(&self) -> bool {
        self.param_slices()
            .iter()
            .all(|s| s.iter().all(|v| v.is_finite()))
    }
}
