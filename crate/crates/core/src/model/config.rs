use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, NetSpec};

/// Layer layout of a [`DeepOSetsModel`](super::DeepOSetsModel).
///
/// `x` and `y` (zero-padded to `input_dim`) are each linearly embedded into
/// `embed_width` features; the concatenation feeds the encoder, whose output
/// width is the pooled dimension. Branch and trunk both end in
/// `readout_width` units.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub embed_width: usize,
    pub encoder: NetSpec,
    pub branch: NetSpec,
    pub trunk: NetSpec,
}

/// Built-in layouts for one- and five-dimensional linear regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    D1,
    D5,
}

impl Preset {
    pub fn input_dim(self) -> usize {
        match self {
            Preset::D1 => 1,
            Preset::D5 => 5,
        }
    }

    /// Default number of in-context examples used when training this preset.
    pub fn train_examples(self) -> usize {
        match self {
            Preset::D1 => 13,
            Preset::D5 => 50,
        }
    }

    pub fn from_dim(d: usize) -> Result<Self> {
        match d {
            1 => Ok(Preset::D1),
            5 => Ok(Preset::D5),
            other => Err(Error::Config(format!(
                "no preset for d={other}; use a custom model config"
            ))),
        }
    }

    pub fn config(self) -> ModelConfig {
        match self {
            // 5 hidden SELU layers of 50 → 400; branch/trunk 4 hidden tanh layers of 40 → 100.
            Preset::D1 => ModelConfig::new(1, 5, &[50; 5], 400, &[40; 4], &[40; 4], 100),
            // 2 hidden SELU layers of 200 → 800; branch/trunk 3 hidden tanh layers of 200 → 200.
            Preset::D5 => ModelConfig::new(5, 15, &[200; 2], 800, &[200; 3], &[200; 3], 200),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::D1 => "d1",
            Preset::D5 => "d5",
        })
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "d1" => Ok(Preset::D1),
            "d5" => Ok(Preset::D5),
            other => Err(Error::Config(format!(
                "unknown preset `{other}` (expected d1 or d5)"
            ))),
        }
    }
}

/// Preset layout for input dimension `d` (1 or 5).
pub fn preset_config(d: usize) -> Result<ModelConfig> {
    Ok(Preset::from_dim(d)?.config())
}

impl ModelConfig {
    /// Standard layout: SELU encoder with identity output, tanh branch with
    /// identity output, tanh trunk with tanh output.
    pub fn new(
        input_dim: usize,
        embed_width: usize,
        encoder_hidden: &[usize],
        pooled_dim: usize,
        branch_hidden: &[usize],
        trunk_hidden: &[usize],
        readout_width: usize,
    ) -> Self {
        Self {
            input_dim,
            embed_width,
            encoder: NetSpec::mlp(
                2 * embed_width,
                encoder_hidden,
                pooled_dim,
                Activation::Selu,
                Activation::Identity,
            ),
            branch: NetSpec::mlp(
                pooled_dim,
                branch_hidden,
                readout_width,
                Activation::Tanh,
                Activation::Identity,
            ),
            trunk: NetSpec::mlp(
                input_dim,
                trunk_hidden,
                readout_width,
                Activation::Tanh,
                Activation::Tanh,
            ),
        }
    }

    pub fn pooled_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    pub fn readout_width(&self) -> usize {
        self.branch.output_dim()
    }

    /// Embedding maps + encoder + branch + trunk + scalar bias.
    pub fn parameter_count(&self) -> usize {
        2 * self.embed_width * (self.input_dim + 1)
            + self.encoder.parameter_count()
            + self.branch.parameter_count()
            + self.trunk.parameter_count()
            + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.embed_width == 0 {
            return Err(Error::InvalidSpec(
                "input_dim and embed_width must be ≥ 1".into(),
            ));
        }
        self.encoder.validate()?;
        self.branch.validate()?;
        self.trunk.validate()?;
        let check = |cond: bool, msg: String| {
            if cond {
                Ok(())
            } else {
                Err(Error::InvalidSpec(msg))
            }
        };
        check(
            self.encoder.input_dim() == 2 * self.embed_width,
            format!(
                "encoder input {} must equal twice the embed width {}",
                self.encoder.input_dim(),
                self.embed_width
            ),
        )?;
        check(
            self.branch.input_dim() == self.pooled_dim(),
            format!(
                "branch input {} must equal pooled dim {}",
                self.branch.input_dim(),
                self.pooled_dim()
            ),
        )?;
        check(
            self.trunk.input_dim() == self.input_dim,
            format!(
                "trunk input {} must equal input dim {}",
                self.trunk.input_dim(),
                self.input_dim
            ),
        )?;
        check(
            self.branch.output_dim() == self.trunk.output_dim(),
            format!(
                "branch output {} must equal trunk output {}",
                self.branch.output_dim(),
                self.trunk.output_dim()
            ),
        )?;
        let branch_out = self.branch.0.last().map(|l| l.activation);
        check(
            branch_out == Some(Activation::Identity),
            "branch output layer must be identity".into(),
        )
    }
}
