//! Experiment configuration and dotted-key overrides.
//!
//! Overrides act on the JSON form of the config, so every serialized field
//! is addressable: `model.grid.dt=10`, `train.lr=1e-3`, `data.split_seed=4`.
//! The edited document is deserialized again, which re-runs all validation.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::data::DEFAULT_FRACTIONS;
use crate::model::{MlpConfig, ModelSpec, NodeConfig, PmnnConfig};
use crate::train::TrainConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("override {0:?} is not of the form key=value")]
    BadOverride(String),
    #[error("unknown configuration key {0:?}")]
    UnknownKey(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub path: Option<String>,
    pub fractions: [f64; 3],
    pub split_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            path: None,
            fractions: DEFAULT_FRACTIONS,
            split_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub data: DataConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::for_model("pmnn").expect("known kind")
    }
}

impl ExperimentConfig {
    /// Reference architecture of the given kind on 8 features with the
    /// matching Table-1 optimum for batch size and learning rate.
    pub fn for_model(kind: &str) -> Result<Self, ConfigError> {
        let (model, lr) = match kind {
            "pmnn" => (ModelSpec::Pmnn(PmnnConfig::reference(8)), 5e-4),
            "node" => (ModelSpec::Node(NodeConfig::reference(8)), 1e-3),
            "mlp" => (ModelSpec::Mlp(MlpConfig::iso_parameter(8)), 5e-4),
            other => {
                return Err(ConfigError::Invalid(format!(
                    "unknown model kind {other:?} (expected pmnn, node or mlp)"
                )))
            }
        };
        Ok(Self {
            model,
            train: TrainConfig {
                lr,
                ..TrainConfig::default()
            },
            data: DataConfig::default(),
        })
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn from_value(value: Value) -> Result<Self, ConfigError> {
        serde_json::from_value(value).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn with_overrides(&self, overrides: &[(String, Value)]) -> Result<Self, ConfigError> {
        let mut doc = self.to_value();
        for (key, value) in overrides {
            set_dotted(&mut doc, key, value.clone())?;
        }
        Self::from_value(doc)
    }
}

/// Split `key=value`; the value is read as JSON when possible and as a bare
/// string otherwise, so `train.lr=1e-3` and `data.path=x.csv` both work.
pub fn parse_override(raw: &str) -> Result<(String, Value), ConfigError> {
    let (key, value) = raw
        .split_once('=')
        .ok_or_else(|| ConfigError::BadOverride(raw.to_string()))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(ConfigError::BadOverride(raw.to_string()));
    }
    let value = value.trim();
    let parsed = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()));
    Ok((key.to_string(), parsed))
}

/// Replace the existing entry at `key` (dot-separated object path).
pub fn set_dotted(doc: &mut Value, key: &str, value: Value) -> Result<(), ConfigError> {
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (depth, part) in parts.iter().enumerate() {
        let slot = node
            .as_object_mut()
            .and_then(|m| m.get_mut(*part))
            .ok_or_else(|| ConfigError::UnknownKey(key.to_string()))?;
        if depth + 1 == parts.len() {
            *slot = value;
            return Ok(());
        }
        node = slot;
    }
    Err(ConfigError::UnknownKey(key.to_string()))
}
