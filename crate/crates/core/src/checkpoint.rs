//! Policy checkpoints as self-describing JSON. Floats are written with
//! shortest round-trip formatting, so a save/load cycle is bit-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{NetArch, PolicyParams, Weights};

pub const FORMAT: &str = "hlas-policy-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    /// `[fan_in, fan_out]` for matrices, `[len]` for vectors.
    pub shape: Vec<usize>,
    /// Row-major values.
    pub values: Vec<f64>,
}

/// Training metadata stored next to the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config_digest: String,
    pub seed: u64,
    pub problem: String,
    pub variant: String,
    pub iteration: usize,
    pub env_steps: usize,
    /// Best moving-average return seen so far.
    pub best_avg_return: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub arch: NetArch,
    pub activation: String,
    pub blocks: Vec<Block>,
    pub obs_scales: Vec<f64>,
    pub meta: CheckpointMeta,
}

fn shapes(w: &Weights) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut dense = |d: &crate::policy::Dense| {
        out.push(vec![d.w.nrows(), d.w.ncols()]);
        out.push(vec![d.b.len()]);
    };
    for d in &w.trunk {
        dense(d);
    }
    for d in [&w.policy_hidden, &w.policy_out, &w.value_hidden, &w.value_out] {
        dense(d);
    }
    out.push(vec![w.log_std.len()]);
    out
}

impl Checkpoint {
    pub fn new(params: &PolicyParams, meta: CheckpointMeta) -> Self {
        let blocks = params
            .weights
            .blocks()
            .into_iter()
            .zip(shapes(&params.weights))
            .map(|((name, values), shape)| Block {
                name,
                shape,
                values: values.to_vec(),
            })
            .collect();
        Self {
            format: FORMAT.into(),
            version: VERSION,
            arch: params.arch.clone(),
            activation: params.arch.activation.name().into(),
            blocks,
            obs_scales: params.obs_scales.clone(),
            meta,
        }
    }

    /// Rebuild the network, checking every block against the stored
    /// architecture.
    pub fn params(&self) -> Result<PolicyParams> {
        if self.format != FORMAT || self.version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint {} v{}",
                self.format, self.version
            )));
        }
        if self.activation != self.arch.activation.name() {
            return Err(Error::Checkpoint(format!(
                "activation `{}` disagrees with architecture",
                self.activation
            )));
        }
        self.arch.validate()?;
        if self.obs_scales.len() != self.arch.input_dim {
            return Err(Error::Checkpoint("observation scale count mismatch".into()));
        }
        let mut weights = Weights::zeros(&self.arch);
        let expected = shapes(&weights);
        let mut slots = weights.blocks_mut();
        if slots.len() != self.blocks.len() {
            return Err(Error::Checkpoint(format!(
                "{} blocks stored, architecture has {}",
                self.blocks.len(),
                slots.len()
            )));
        }
        for (((name, slot), shape), block) in slots.iter_mut().zip(&expected).zip(&self.blocks) {
            if *name != block.name || *shape != block.shape || slot.len() != block.values.len() {
                return Err(Error::Checkpoint(format!(
                    "block `{}` {:?} does not fit `{name}` {shape:?}",
                    block.name, block.shape
                )));
            }
            slot.copy_from_slice(&block.values);
        }
        drop(slots);
        if !weights.is_finite() {
            return Err(Error::non_finite("checkpoint weights"));
        }
        Ok(PolicyParams {
            arch: self.arch.clone(),
            weights,
            obs_scales: self.obs_scales.clone(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
