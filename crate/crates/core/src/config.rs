//! Run configuration: a TOML file with one section per concern, plus
//! `section.key=value` overrides from the command line.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::SplitSpec;
use crate::models::ModelSpec;
use crate::train::TrainConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot parse configuration: {0}")]
    Parse(String),
    #[error("invalid override {0:?}; expected section.key=value")]
    Override(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Lookback selection on the validation block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct CvConfig {
    /// Candidate lookbacks; empty means the model's own lookback only.
    pub lookbacks: Vec<usize>,
}

/// Ensemble members: one per (lookback multiple of `H`, seed) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleSpec {
    pub lookback_multipliers: Vec<usize>,
    pub seeds: Vec<u64>,
}

impl Default for EnsembleSpec {
    fn default() -> Self {
        Self { lookback_multipliers: vec![2, 3, 4, 5], seeds: (1..=10).collect() }
    }
}

impl EnsembleSpec {
    pub fn members(&self) -> usize {
        self.lookback_multipliers.len() * self.seeds.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub seed: Option<u64>,
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub split: SplitSpec,
    pub cv: CvConfig,
    pub ensemble: EnsembleSpec,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Config = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Applies `section.key=value` overrides; values use TOML syntax, with
    /// bare words taken as strings.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut table: toml::Table = toml::from_str(&self.to_toml()).map_err(|e| ConfigError::Parse(e.to_string()))?;
        for item in overrides {
            let (path, raw) = item.split_once('=').ok_or_else(|| ConfigError::Override(item.clone()))?;
            let keys: Vec<&str> = path.trim().split('.').collect();
            if keys.iter().any(|k| k.is_empty()) {
                return Err(ConfigError::Override(item.clone()));
            }
            let raw = raw.trim();
            let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(raw.to_string()));
            let mut slot = &mut table;
            for key in &keys[..keys.len() - 1] {
                slot = slot
                    .entry(key.to_string())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                    .as_table_mut()
                    .ok_or_else(|| ConfigError::Override(item.clone()))?;
            }
            slot.insert(keys[keys.len() - 1].to_string(), value);
        }
        let text = toml::to_string(&table).map_err(|e| ConfigError::Parse(e.to_string()))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let s = &self.split;
        if !(0.0..1.0).contains(&s.test_fraction) || !(0.0..1.0).contains(&s.val_fraction) || s.test_fraction + s.val_fraction >= 1.0 {
            return Err(ConfigError::Invalid("split fractions must be in [0, 1) and sum below 1".into()));
        }
        if self.train.batch_size == 0 {
            return Err(ConfigError::Invalid("batch_size must be positive".into()));
        }
        if self.cv.lookbacks.contains(&0) {
            return Err(ConfigError::Invalid("lookback candidates must be positive".into()));
        }
        self.model.validate().map_err(|e| ConfigError::Invalid(e.to_string()))
    }
}
