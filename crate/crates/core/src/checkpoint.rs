//! Versioned JSON checkpoints.
//!
//! ```text
//! {"version": 1, "config": {...}, "tensors": {"name": {"shape": [...], "data": [...]}},
//!  "bn_running_stats": {"bn_a": {"mean": [...], "var": [...]}}, "optimizer_state": {...}}
//! ```
//!
//! `serde_json` writes floats with shortest round-trip formatting, so a saved
//! and reloaded model reproduces its eval-mode outputs exactly on the same
//! platform.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::RunningStats;
use crate::network::{Model, ModelConfig};
use crate::numerics::{AdamState, TensorData};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: ModelConfig,
    pub tensors: BTreeMap<String, TensorData>,
    pub bn_running_stats: BTreeMap<String, RunningStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer_state: Option<AdamState>,
}

impl Checkpoint {
    pub fn capture(model: &Model, optimizer_state: Option<&AdamState>) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config: model.config().clone(),
            tensors: model
                .named_parameters()
                .into_iter()
                .map(|(name, t)| (name, t.to_data()))
                .collect(),
            bn_running_stats: model
                .batch_norms()
                .into_iter()
                .map(|(name, bn)| (name.to_string(), bn.running_stats()))
                .collect(),
            optimizer_state: optimizer_state.cloned(),
        }
    }

    /// Rebuild the model: structure from the config, values from the tensors.
    /// Every parameter must be present with the right shape, and nothing extra.
    pub fn restore(&self) -> Result<Model> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        let model = Model::build(&self.config, 0)?;
        let params = model.named_parameters();
        for (name, t) in &params {
            let saved = self
                .tensors
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            if saved.shape != t.shape() || saved.data.len() != t.numel() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} has shape {:?}, model expects {:?}",
                    saved.shape,
                    t.shape()
                )));
            }
            t.data_mut().copy_from_slice(&saved.data);
        }
        if self.tensors.len() != params.len() {
            let known: Vec<&String> = params.iter().map(|(n, _)| n).collect();
            let extra: Vec<&String> = self.tensors.keys().filter(|k| !known.contains(k)).collect();
            return Err(Error::Checkpoint(format!("unexpected tensors {extra:?}")));
        }
        for (name, bn) in model.batch_norms() {
            let stats = self
                .bn_running_stats
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing running stats for {name}")))?;
            bn.set_running_stats(stats.clone())?;
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, self)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        Ok(ck)
    }
}

pub fn save_model(model: &Model, optimizer_state: Option<&AdamState>, path: &Path) -> Result<()> {
    Checkpoint::capture(model, optimizer_state).save(path)
}

pub fn load_model(path: &Path) -> Result<Model> {
    Checkpoint::load(path)?.restore()
}
