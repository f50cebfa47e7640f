//! Experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ann::{AnnTrainConfig, CalibrationConfig};
use crate::dataset::DatasetFormat;
use crate::encoding::EncodingKind;
use crate::network::{NetworkSpec, SpikeRule, Topology};
use crate::parallel::Execution;
use crate::stdb::TrainConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Read { path: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub path: PathBuf,
    pub format: DatasetFormat,
    /// Use only the first `n` training samples.
    pub train_limit: Option<usize>,
    /// Use only the first `n` test samples.
    pub test_limit: Option<usize>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self { path: PathBuf::from("data/digits"), format: DatasetFormat::Idx, train_limit: None, test_limit: None }
    }
}

/// A second fine-tuning run with a different encoder and spike rule,
/// started from the same converted parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub encoder: EncodingKind,
    pub rule: SpikeRule,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self { encoder: EncodingKind::Direct, rule: SpikeRule::MultiSpike }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub dataset: DatasetConfig,
    /// Layer stack; its `timesteps` is overwritten by the top-level value.
    pub network: NetworkSpec,
    pub encoder: EncodingKind,
    pub timesteps: usize,
    pub rule: SpikeRule,
    pub calibration: CalibrationConfig,
    pub ann: AnnTrainConfig,
    pub snn: TrainConfig,
    pub baseline: Option<BaselineConfig>,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Number of test samples evaluated; all when absent.
    pub eval_samples: Option<usize>,
    pub execution: Execution,
    /// Energy table; the bundled 45 nm values when absent.
    pub energy_constants: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            dataset: DatasetConfig::default(),
            network: NetworkSpec::digits_small(),
            encoder: EncodingKind::Hybrid,
            timesteps: 5,
            rule: SpikeRule::SingleSpike,
            calibration: CalibrationConfig::default(),
            ann: AnnTrainConfig::default(),
            snn: TrainConfig::default(),
            baseline: None,
            seed: 0,
            output_dir: PathBuf::from("out"),
            eval_samples: None,
            execution: Execution::default(),
            energy_constants: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Read { path: path.display().to_string(), message: e.to_string() })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    /// Network spec with the configured timestep count.
    pub fn network_spec(&self) -> NetworkSpec {
        NetworkSpec { timesteps: self.timesteps, ..self.network.clone() }
    }

    pub fn topology(&self) -> Result<Topology, ConfigError> {
        Topology::new(&self.network_spec()).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    /// Structural checks that need no file access.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!("schema_version {} unsupported (expected {SCHEMA_VERSION})", self.schema_version));
        }
        if self.timesteps == 0 || (self.timesteps < 2 && self.encoder == EncodingKind::Hybrid) {
            return bad(format!("timesteps {} too small for {} encoding", self.timesteps, self.encoder));
        }
        if let Some(b) = &self.baseline {
            if b.encoder == EncodingKind::Hybrid && self.timesteps < 2 {
                return bad("baseline hybrid encoding needs at least 2 timesteps".into());
            }
        }
        if self.eval_samples == Some(0) {
            return bad("eval_samples must be positive".into());
        }
        self.topology()?;
        self.calibration.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.ann.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.snn.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    /// [`Self::validate`] plus existence of referenced files.
    pub fn validate_files(&self) -> Result<(), ConfigError> {
        self.validate()?;
        if !self.dataset.path.is_dir() {
            return Err(ConfigError::Invalid(format!(
                "dataset path {} is not a directory",
                self.dataset.path.display()
            )));
        }
        if let Some(p) = &self.energy_constants {
            if !p.is_file() {
                return Err(ConfigError::Invalid(format!("energy constants {} not found", p.display())));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_and_validate() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        assert_eq!(ExperimentConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg = ExperimentConfig::from_json(r#"{"schema_version": 1, "seed": 9, "snn": {"epochs": 3}}"#).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.snn.epochs, 3);
        assert_eq!(cfg.snn.gamma, 0.3);
        assert_eq!(cfg.timesteps, 5);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(ExperimentConfig::from_json(r#"{"bogus": 1}"#).is_err());
        let cfg = ExperimentConfig { timesteps: 1, ..Default::default() };
        assert!(cfg.validate().is_err());
        let cfg = ExperimentConfig { schema_version: 7, ..Default::default() };
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.snn.lr = 0.0;
        assert!(cfg.validate().is_err());
    }
}
