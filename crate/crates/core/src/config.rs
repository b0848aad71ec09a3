//! Run configuration: one TOML file with `[model]`, `[train]`, `[synth]` and
//! `[run]` tables. Every field has a default, so an empty file is valid, and
//! the resolved configuration written next to a run's outputs reproduces it.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{LossMode, ModelConfig};
use crate::training::{Hyper, SynthSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSettings {
    /// Parallel folds for leave-one-subject-out evaluation.
    pub jobs: usize,
    /// Fraction of subjects held out by `evaluate --holdout`.
    pub holdout_fraction: f64,
    /// Edges listed per layer by `inspect-lam`.
    pub top_k: usize,
    pub gradcheck_tol: f64,
    /// Samples in the gradient-check batch.
    pub gradcheck_samples: usize,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            jobs: 1,
            holdout_fraction: 0.25,
            top_k: 10,
            gradcheck_tol: 1e-4,
            gradcheck_samples: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: Hyper,
    pub synth: SynthSpec,
    pub run: RunSettings,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Toml(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Toml(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()?)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.synth.validate()?;
        if self.run.jobs == 0 {
            return Err(Error::Config("jobs must be >= 1".into()));
        }
        if self.model.loss != LossMode::Me && self.synth.au_vocab_size != self.model.au_vocab_size {
            log::warn!(
                "synth.au_vocab_size = {} differs from model.au_vocab_size = {}",
                self.synth.au_vocab_size,
                self.model.au_vocab_size
            );
        }
        Ok(())
    }

    /// The small network used for gradient checks and smoke tests:
    /// widths 8, 8, 16, 16, three classes, four AUs, fused at layer 2.
    pub fn micro() -> Self {
        RunConfig {
            model: ModelConfig {
                fusion_layer: 2,
                layer_widths: vec![8, 8, 16, 16],
                num_classes: 3,
                au_vocab_size: 4,
                ..ModelConfig::default()
            },
            ..RunConfig::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(RunConfig::from_toml_str("").unwrap(), RunConfig::default());
    }

    #[test]
    fn resolved_config_round_trips() {
        let mut cfg = RunConfig::micro();
        cfg.model.au_layer = Some(3);
        cfg.model.loss = LossMode::Au;
        cfg.train.lr = 0.0125;
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(RunConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_and_unknown_keys() {
        let cfg = RunConfig::from_toml_str("[model]\nmode = \"ssgn\"\nfeature = \"b\"\n").unwrap();
        assert_eq!(cfg.model.mode, crate::network::Architecture::Ssgn);
        assert_eq!(cfg.train, Hyper::default());
        assert!(RunConfig::from_toml_str("[model]\nwidth = 3\n").is_err());
    }
}
