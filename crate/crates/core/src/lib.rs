//! DeepOSets: a permutation-invariant operator network that learns linear
//! regression in context, plus the task sampler, least-squares baseline,
//! trainer and benchmark harness around it.

pub mod baseline;
pub mod bench;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod model;
pub mod nn;
pub mod rng;
pub mod taskgen;
pub mod trainer;

pub use error::{Error, Result};
pub use model::{BranchCache, DeepOSetsModel, ModelConfig, Preset, Prompt};
