//! Self-contained model files: the experiment config, flat weights and the
//! standardizer fitted on the training split.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::ExperimentConfig;
use crate::data::Standardizer;
use crate::json::to_pretty;
use crate::model::{ModelError, Parameters, Regressor};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error("unsupported checkpoint format version {0}")]
    Version(u32),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// `params` holds every block in layout order, each row-major (for the PMNN:
/// `W_h, b_h, ln_gain, ln_bias, W_out, b_out`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: ExperimentConfig,
    pub seed: u64,
    pub params: Vec<f64>,
    pub standardizer: Option<Standardizer>,
}

impl Checkpoint {
    pub fn new(
        config: ExperimentConfig,
        params: &Parameters,
        standardizer: Option<Standardizer>,
    ) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            seed: config.train.seed,
            config,
            params: params.to_flat(),
            standardizer,
        }
    }

    pub fn parameters(&self) -> Result<Parameters, ModelError> {
        Parameters::from_flat(&self.config.model.layout(), &self.params)
    }

    pub fn to_json(&self) -> String {
        to_pretty(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, CheckpointError> {
        let ck: Checkpoint =
            serde_json::from_str(text).map_err(|e| CheckpointError::Format(e.to_string()))?;
        if ck.format_version != FORMAT_VERSION {
            return Err(CheckpointError::Version(ck.format_version));
        }
        ck.config.model.validate()?;
        ck.parameters()?;
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }
}
