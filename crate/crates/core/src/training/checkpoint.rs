//! Trained-model snapshots and their on-disk format.
//!
//! A checkpoint directory holds `manifest.json` plus one raw little-endian
//! `f32` file per weight tensor, in manifest order.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

use super::networks::{NetworkConfig, Networks};
use super::standardize::ParamStats;
use super::{EpochLoss, TrainConfig};
use crate::error::{Error, Result};
use crate::generative::{ModelSpec, SizeDistribution};
use crate::nn::Params;
use crate::rng::{seeded, RngState};
use crate::zoo::ModelConfig;

pub const MANIFEST: &str = "manifest.json";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub model_hash: String,
    pub networks_config: NetworkConfig,
    pub train_config: TrainConfig,
    pub stats: ParamStats,
    /// Group and observation counts seen in training.
    pub training_range: SizeDistribution,
    pub rng_state: RngState,
    pub initial_loss: Option<f64>,
    pub loss_history: Vec<EpochLoss>,
    pub nets: Networks,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub file: String,
    pub dtype: String,
    pub endianness: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format_version: u32,
    crate_version: String,
    model: ModelConfig,
    model_hash: String,
    networks_config: NetworkConfig,
    train_config: TrainConfig,
    stats: ParamStats,
    training_range: SizeDistribution,
    rng_state: RngState,
    initial_loss: Option<f64>,
    loss_history: Vec<EpochLoss>,
    tensors: Vec<TensorEntry>,
}

impl Checkpoint {
    pub fn spec(&self) -> Result<Box<dyn ModelSpec>> {
        self.model.build()
    }

    fn manifest(&self) -> Manifest {
        let mut tensors = vec![];
        self.nets.visit("", &mut |name, shape, _| {
            tensors.push(TensorEntry {
                name: name.to_string(),
                shape: shape.to_vec(),
                file: format!("t{:04}.f32", tensors.len()),
                dtype: "f32".into(),
                endianness: "little".into(),
            });
        });
        Manifest {
            format_version: FORMAT_VERSION,
            crate_version: env!("CARGO_PKG_VERSION").into(),
            model: self.model.clone(),
            model_hash: self.model_hash.clone(),
            networks_config: self.networks_config.clone(),
            train_config: self.train_config.clone(),
            stats: self.stats.clone(),
            training_range: self.training_range,
            rng_state: self.rng_state.clone(),
            initial_loss: self.initial_loss,
            loss_history: self.loss_history.clone(),
            tensors,
        }
    }

    fn tensor_bytes(&self) -> Vec<Vec<u8>> {
        let mut out = vec![];
        self.nets.visit("", &mut |_, _, v| {
            out.push(v.iter().flat_map(|&x| (x as f32).to_le_bytes()).collect());
        });
        out
    }

    /// Writes the checkpoint into `dir`, creating it if needed.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let manifest = self.manifest();
        for (entry, bytes) in manifest.tensors.iter().zip(self.tensor_bytes()) {
            std::fs::write(dir.join(&entry.file), bytes)?;
        }
        std::fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(dir.join(MANIFEST)).map_err(|e| {
            Error::config(format!("cannot read checkpoint {}: {e}", dir.display()))
        })?;
        let m: Manifest = serde_json::from_str(&text)
            .map_err(|e| Error::config(format!("invalid checkpoint manifest: {e}")))?;
        if m.format_version != FORMAT_VERSION {
            return Err(Error::config(format!(
                "unsupported checkpoint format {}",
                m.format_version
            )));
        }
        let spec = m.model.build()?;
        if spec.hash() != m.model_hash {
            return Err(Error::config("checkpoint model hash does not match its model config"));
        }
        let mut nets = Networks::new(spec.as_ref(), &m.networks_config, &mut seeded(0))?;
        let mut expected = vec![];
        nets.visit("", &mut |name, shape, _| expected.push((name.to_string(), shape.to_vec())));
        if expected.len() != m.tensors.len() {
            return Err(Error::config("checkpoint tensor count does not match its config"));
        }
        let mut data = Vec::with_capacity(expected.len());
        for ((name, shape), entry) in expected.iter().zip(&m.tensors) {
            if *name != entry.name || *shape != entry.shape {
                return Err(Error::config(format!(
                    "checkpoint tensor {} has shape {:?}, expected {name} {shape:?}",
                    entry.name, entry.shape
                )));
            }
            if entry.dtype != "f32" || entry.endianness != "little" {
                return Err(Error::config("only little-endian f32 tensors are supported"));
            }
            let bytes = std::fs::read(dir.join(&entry.file))?;
            let count: usize = shape.iter().product();
            if bytes.len() != 4 * count {
                return Err(Error::config(format!("tensor file {} has wrong size", entry.file)));
            }
            data.push(
                bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                    .collect::<Vec<f64>>(),
            );
        }
        let mut k = 0;
        nets.visit_mut("", &mut |_, _, v| {
            v.copy_from_slice(&data[k]);
            k += 1;
        });
        Ok(Checkpoint {
            model: m.model,
            model_hash: m.model_hash,
            networks_config: m.networks_config,
            train_config: m.train_config,
            stats: m.stats,
            training_range: m.training_range,
            rng_state: m.rng_state,
            initial_loss: m.initial_loss,
            loss_history: m.loss_history,
            nets,
        })
    }

    /// SHA-256 over the manifest and all tensor bytes.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_string(&self.manifest()).unwrap_or_default().as_bytes());
        for bytes in self.tensor_bytes() {
            h.update(&bytes);
        }
        hex::encode(h.finalize())
    }
}
