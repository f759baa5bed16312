//! Run configuration file: `{"train": {..}, "network": {..}, "histogram": {..}}`.
//!
//! Every field is optional and falls back to its default; unknown keys are
//! rejected so typos do not pass silently.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::histogram::HistogramConfig;
use crate::networks::{ModelConfig, NetworkConfig};
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub network: NetworkConfig,
    pub histogram: HistogramConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.model().validate()
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            network: self.network.clone(),
            histogram: self.histogram.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg = RunConfig::from_json(r#"{"train": {"lr": 0.001, "max_epochs": 3}, "histogram": {"bins": 31}}"#).unwrap();
        assert_eq!(cfg.train.lr, 1e-3);
        assert_eq!(cfg.train.batch_size, 8);
        assert_eq!(cfg.histogram.bins, 31);
        assert_eq!(cfg.network, NetworkConfig::default());
        let back = RunConfig::from_json(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(RunConfig::from_json(r#"{"trian": {}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"train": {"lrr": 0.1}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"train": {"lr_decay_factor": 1.5}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"histogram": {"bins": 0}}"#).is_err());
    }
}
