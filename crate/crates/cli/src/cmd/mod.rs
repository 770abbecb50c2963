pub mod evaluate;
pub mod gradcheck;
pub mod grid;
pub mod simulate;
pub mod train;

use std::path::Path;

use dynpmnn::config::ExperimentConfig;
use dynpmnn::data::{load_csv, Dataset, RawTable, Schema};
use dynpmnn::model::Regressor;
use log::info;
use serde_json::Value;

use crate::failure::{Classify, Failure};
use crate::settings::{apply_sets, merge_file};
use crate::Common;

/// Experiment config from defaults (per `--model`), `--config`, `--set`,
/// `--seed` and `--data`, in that order.
pub fn experiment_config(common: &Common) -> Result<ExperimentConfig, Failure> {
    let defaults = match &common.model {
        Some(kind) => ExperimentConfig::for_model(kind).config("--model")?,
        None => ExperimentConfig::default(),
    };
    let mut extra = Vec::new();
    if let Some(seed) = common.seed {
        extra.push(("train.seed".to_string(), Value::from(seed)));
        extra.push(("data.split_seed".to_string(), Value::from(seed)));
    }
    if let Some(path) = &common.data {
        extra.push((
            "data.path".to_string(),
            Value::from(path.display().to_string()),
        ));
    }
    let mut doc = defaults.to_value();
    merge_file(&mut doc, common.config.as_deref())?;
    // An explicit --model beats a config file describing another kind.
    if common.model.is_some() && doc["model"]["kind"] != defaults.to_value()["model"]["kind"] {
        doc["model"] = defaults.to_value()["model"].clone();
    }
    apply_sets(&mut doc, &common.sets, &extra)?;
    let config = ExperimentConfig::from_value(doc).config("invalid configuration")?;
    config.model.validate().config("model")?;
    config.train.validate()?;
    Ok(config)
}

pub fn load_table(path: Option<&str>) -> Result<RawTable, Failure> {
    let path = path.ok_or_else(|| {
        Failure::Config(anyhow::anyhow!(
            "no dataset given (use --data or data.path)"
        ))
    })?;
    let table = load_csv(Path::new(path), &Schema::california()).data("loading dataset")?;
    info!(
        "loaded {} rows from {path} ({} rejected)",
        table.rows(),
        table.rejected_lines().len()
    );
    Ok(table)
}

pub fn load_dataset(config: &ExperimentConfig) -> Result<Dataset, Failure> {
    let table = load_table(config.data.path.as_deref())?;
    Dataset::prepare(&table, config.data.fractions, config.data.split_seed).data("preparing splits")
}
