use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::SyntheticShiftSpec;
use crate::error::{Error, Result};

/// Learning rate and epoch budget of one training stage.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub lr: f64,
    pub epochs: usize,
}

fn default_batch_size() -> usize {
    200
}

fn default_pretrain() -> StageConfig {
    StageConfig { lr: 1e-3, epochs: 80 }
}

fn default_adapt() -> StageConfig {
    StageConfig { lr: 1e-4, epochs: 150 }
}

/// Run configuration as read from the `--config` JSON file. Unknown keys
/// are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_pretrain")]
    pub pretrain: StageConfig,
    #[serde(default = "default_adapt")]
    pub adapt: StageConfig,
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Keep at most this many source training examples.
    #[serde(default)]
    pub source_cap: Option<usize>,
    /// Keep at most this many target training examples.
    #[serde(default)]
    pub target_cap: Option<usize>,
    /// Keep at most this many examples of each test split.
    #[serde(default)]
    pub test_cap: Option<usize>,
    /// Applied to the target domain's images before training and testing.
    #[serde(default)]
    pub shift: Option<SyntheticShiftSpec>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            batch_size: default_batch_size(),
            pretrain: default_pretrain(),
            adapt: default_adapt(),
            data_dir: None,
            output_dir: None,
            source_cap: None,
            target_cap: None,
            test_cap: None,
            shift: None,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Format(format!("run config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Validation("batch_size must be positive".into()));
        }
        for (name, s) in [("pretrain", self.pretrain), ("adapt", self.adapt)] {
            if !(s.lr.is_finite() && s.lr > 0.0) {
                return Err(Error::Validation(format!("{name}.lr must be positive")));
            }
        }
        Ok(())
    }

    /// Hex sha256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex(&Sha256::digest(json))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_fill_missing_keys() {
        let cfg = RunConfig::from_json(r#"{"seed": 42}"#).unwrap();
        assert_eq!(cfg.batch_size, 200);
        assert_eq!(cfg.pretrain, StageConfig { lr: 1e-3, epochs: 80 });
        assert_eq!(cfg.adapt, StageConfig { lr: 1e-4, epochs: 150 });
        assert_eq!(cfg.seed, 42);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_json(r#"{"seed": 1, "learning_rate": 0.1}"#).unwrap_err();
        assert!(err.is_format());
        assert!(RunConfig::from_json(r#"{"pretrain": {"lr": 1e-3, "epochs": 1, "x": 0}}"#).is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
