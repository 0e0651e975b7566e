//! Run configuration, read from a single TOML document.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LossConfig, ModelConfig};
use crate::scene::SceneConfig;
use crate::train::TrainConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Root holding `train/` and `eval/` dataset directories.
    pub dir: PathBuf,
    pub train_samples: usize,
    pub eval_samples: usize,
    /// Scene seeds of the eval split start here so the splits never share
    /// a scene.
    pub eval_seed_offset: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            dir: PathBuf::from("data"),
            train_samples: 200,
            eval_samples: 50,
            eval_seed_offset: 1_000_000,
        }
    }
}

impl DataConfig {
    pub fn train_dir(&self) -> PathBuf {
        self.dir.join("train")
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.dir.join("eval")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub precision: Precision,
    /// Where checkpoints, logs and reports go.
    pub out_dir: PathBuf,
    pub data: DataConfig,
    pub scene: SceneConfig,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            precision: Precision::F32,
            out_dir: PathBuf::from("runs"),
            data: DataConfig::default(),
            scene: SceneConfig::default(),
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.model.validate()?;
        self.loss.matching.validate()?;
        if !(self.loss.alpha >= 0.0 && self.loss.beta >= 0.0) {
            return Err(Error::Config(format!(
                "loss weights must be non-negative, got alpha={} beta={}",
                self.loss.alpha, self.loss.beta
            )));
        }
        if self.model.iim.queries < self.scene.max_pairs {
            return Err(Error::Config(format!(
                "{} queries cannot cover scenes with up to {} pairs",
                self.model.iim.queries, self.scene.max_pairs
            )));
        }
        self.train.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_document_fills_defaults() {
        let cfg = RunConfig::from_toml(
            "seed = 9\n[loss]\nalpha = 0.5\n[model.ablation]\ncpam_enabled = false\n[train.optimizer]\nlr = 0.001\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.loss.alpha, 0.5);
        assert_eq!(cfg.loss.beta, 0.5);
        assert!(!cfg.model.ablation.cpam_enabled);
        assert!(cfg.model.ablation.mask_guided_enabled);
        assert_eq!(cfg.train.optimizer.lr, 1e-3);
        assert_eq!(cfg.train.batch_size, 4);
    }

    #[test]
    fn default_learning_rate() {
        assert_eq!(RunConfig::default().train.optimizer.lr, 1e-4);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(RunConfig::from_toml("sed = 1").is_err());
        assert!(RunConfig::from_toml("[loss]\nalpha = -1.0").is_err());
        assert!(RunConfig::from_toml("[scene]\nheight = 100").is_err());
        assert!(RunConfig::from_toml("[train]\nbatch_size = 0").is_err());
    }
}
