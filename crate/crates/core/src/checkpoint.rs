//! Plain-text model checkpoints.
//!
//! Layout, one item per line:
//!
//! ```text
//! deeposets-checkpoint
//! format_version 1
//! seed <u64>
//! iterations <u64>
//! final_loss <f64 | none>
//! input_dim <d>
//! embed_width <e>
//! pooled_dim <pooled>
//! readout_width <p>
//! net <name> <layer count>          (x_embed, y_embed, encoder, branch, trunk)
//! layer <in> <out> <activation>
//! w <in values>                     (one line per weight row, row-major)
//! b <out values>
//! ...
//! b0 <f64>
//! end
//! ```
//!
//! Floats are written with 17 significant digits (`{:.16e}`), which round-trips
//! every `f64` exactly, so load → save reproduces the file byte for byte.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{DeepOSetsModel, ModelConfig};
use crate::nn::{Activation, DenseLayer, DenseNet};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "deeposets-checkpoint";

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub iterations: u64,
    pub final_loss: Option<f64>,
}

pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_net(out: &mut String, name: &str, net: &DenseNet) {
    let _ = writeln!(out, "net {name} {}", net.layers().len());
    for layer in net.layers() {
        let _ = writeln!(
            out,
            "layer {} {} {}",
            layer.in_dim(),
            layer.out_dim(),
            layer.activation()
        );
        for row in layer.weights().rows() {
            out.push('w');
            for &v in row {
                out.push(' ');
                out.push_str(&fmt_f64(v));
            }
            out.push('\n');
        }
        out.push('b');
        for &v in layer.bias() {
            out.push(' ');
            out.push_str(&fmt_f64(v));
        }
        out.push('\n');
    }
}

pub fn to_checkpoint_string(model: &DeepOSetsModel, meta: &CheckpointMeta) -> String {
    let c = model.config();
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC}");
    let _ = writeln!(out, "format_version {FORMAT_VERSION}");
    let _ = writeln!(out, "seed {}", meta.seed);
    let _ = writeln!(out, "iterations {}", meta.iterations);
    match meta.final_loss {
        Some(l) => {
            let _ = writeln!(out, "final_loss {}", fmt_f64(l));
        }
        None => out.push_str("final_loss none\n"),
    }
    let _ = writeln!(out, "input_dim {}", c.input_dim);
    let _ = writeln!(out, "embed_width {}", c.embed_width);
    let _ = writeln!(out, "pooled_dim {}", c.pooled_dim());
    let _ = writeln!(out, "readout_width {}", c.readout_width());
    for (name, layer) in [
        ("x_embed", model.x_embedding()),
        ("y_embed", model.y_embedding()),
    ] {
        let net = DenseNet::from_layers(vec![layer.clone()]).expect("embedding layer is valid");
        write_net(&mut out, name, &net);
    }
    write_net(&mut out, "encoder", model.encoder());
    write_net(&mut out, "branch", model.branch());
    write_net(&mut out, "trunk", model.trunk());
    let _ = writeln!(out, "b0 {}", fmt_f64(model.b0()));
    out.push_str("end\n");
    out
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn corrupt(&self, message: impl Into<String>) -> Error {
        Error::CorruptCheckpoint {
            line: self.line,
            message: message.into(),
        }
    }

    fn next_line(&mut self) -> Result<&'a str> {
        match self.inner.next() {
            Some((i, l)) => {
                self.line = i + 1;
                Ok(l)
            }
            None => {
                self.line += 1;
                Err(self.corrupt("unexpected end of file"))
            }
        }
    }

    /// Next line, which must start with `key`; returns the remaining tokens.
    fn expect(&mut self, key: &str) -> Result<Vec<&'a str>> {
        let l = self.next_line()?;
        let mut it = l.split_ascii_whitespace();
        match it.next() {
            Some(k) if k == key => Ok(it.collect()),
            Some(k) => Err(self.corrupt(format!("expected `{key}`, found `{k}`"))),
            None => Err(self.corrupt(format!("expected `{key}`, found an empty line"))),
        }
    }

    fn single<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let toks = self.expect(key)?;
        if toks.len() != 1 {
            return Err(self.corrupt(format!("`{key}` takes exactly one value")));
        }
        toks[0]
            .parse()
            .map_err(|_| self.corrupt(format!("cannot parse `{}` for `{key}`", toks[0])))
    }

    fn floats(&mut self, key: &str, count: usize) -> Result<Vec<f64>> {
        let toks = self.expect(key)?;
        if toks.len() != count {
            return Err(self.corrupt(format!(
                "`{key}` row has {} values, expected {count}",
                toks.len()
            )));
        }
        toks.iter()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| self.corrupt(format!("invalid float `{t}`")))
            })
            .collect()
    }

    fn net(&mut self, name: &str) -> Result<DenseNet> {
        let toks = self.expect("net")?;
        if toks.len() != 2 || toks[0] != name {
            return Err(self.corrupt(format!("expected `net {name} <layers>`")));
        }
        let count: usize = toks[1]
            .parse()
            .map_err(|_| self.corrupt("invalid layer count"))?;
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            let t = self.expect("layer")?;
            if t.len() != 3 {
                return Err(self.corrupt("expected `layer <in> <out> <activation>`"));
            }
            let in_dim: usize = t[0]
                .parse()
                .map_err(|_| self.corrupt("invalid input width"))?;
            let out_dim: usize = t[1]
                .parse()
                .map_err(|_| self.corrupt("invalid output width"))?;
            let act: Activation = t[2]
                .parse()
                .map_err(|e: Error| self.corrupt(e.to_string()))?;
            let mut w = Vec::with_capacity(in_dim * out_dim);
            for _ in 0..out_dim {
                w.extend(self.floats("w", in_dim)?);
            }
            let b = self.floats("b", out_dim)?;
            let weights = Array2::from_shape_vec((out_dim, in_dim), w)
                .map_err(|e| self.corrupt(e.to_string()))?;
            layers.push(
                DenseLayer::new(weights, Array1::from_vec(b), act)
                    .map_err(|e| self.corrupt(e.to_string()))?,
            );
        }
        DenseNet::from_layers(layers).map_err(|e| self.corrupt(e.to_string()))
    }
}

pub fn from_checkpoint_str(text: &str) -> Result<(DeepOSetsModel, CheckpointMeta)> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        line: 0,
    };
    if lines.next_line()? != MAGIC {
        return Err(lines.corrupt("missing checkpoint header"));
    }
    let version: u32 = lines.single("format_version")?;
    if version != FORMAT_VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let seed = lines.single("seed")?;
    let iterations = lines.single("iterations")?;
    let loss_tok: String = lines.single("final_loss")?;
    let final_loss = if loss_tok == "none" {
        None
    } else {
        Some(
            loss_tok
                .parse::<f64>()
                .map_err(|_| lines.corrupt("invalid final_loss"))?,
        )
    };
    let input_dim: usize = lines.single("input_dim")?;
    let embed_width: usize = lines.single("embed_width")?;
    let pooled_dim: usize = lines.single("pooled_dim")?;
    let readout_width: usize = lines.single("readout_width")?;

    let x_embed = lines.net("x_embed")?;
    let y_embed = lines.net("y_embed")?;
    let encoder = lines.net("encoder")?;
    let branch = lines.net("branch")?;
    let trunk = lines.net("trunk")?;
    let b0: f64 = lines.single("b0")?;
    if lines.next_line()? != "end" {
        return Err(lines.corrupt("expected `end`"));
    }

    let config = ModelConfig {
        input_dim,
        embed_width,
        encoder: encoder.spec(),
        branch: branch.spec(),
        trunk: trunk.spec(),
    };
    if config.pooled_dim() != pooled_dim || config.readout_width() != readout_width {
        return Err(lines.corrupt("declared widths disagree with the stored networks"));
    }
    let single = |net: DenseNet| -> Result<DenseLayer> {
        if net.layers().len() != 1 {
            return Err(Error::CorruptCheckpoint {
                line: 0,
                message: "embedding must be a single layer".into(),
            });
        }
        Ok(net.layers()[0].clone())
    };
    let model = DeepOSetsModel::from_parts(
        config,
        single(x_embed)?,
        single(y_embed)?,
        encoder,
        branch,
        trunk,
        b0,
    )
    .map_err(|e| Error::CorruptCheckpoint {
        line: 0,
        message: e.to_string(),
    })?;
    Ok((
        model,
        CheckpointMeta {
            seed,
            iterations,
            final_loss,
        },
    ))
}

pub fn save_checkpoint(model: &DeepOSetsModel, meta: &CheckpointMeta, path: &Path) -> Result<()> {
    std::fs::write(path, to_checkpoint_string(model, meta))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(DeepOSetsModel, CheckpointMeta)> {
    from_checkpoint_str(&std::fs::read_to_string(path)?)
}

/// SHA-256 of a file, lowercase hex.
pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex_digest(&bytes))
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}
