use std::path::PathBuf;

use clap::Args;
use dynpmnn::checkpoint::Checkpoint;
use dynpmnn::data::{split, SplitName};
use dynpmnn::model::Regressor;
use dynpmnn::train::{evaluate, Metrics};
use serde::{Deserialize, Serialize};

use super::load_table;
use crate::failure::{Classify, Failure};
use crate::settings::{echo, prepare_out, resolve, write_json};
use crate::Common;

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,

    /// train, validation or test.
    #[arg(long)]
    pub split: Option<SplitName>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluateConfig {
    pub checkpoint: Option<String>,
    /// Defaults to the dataset recorded in the checkpoint.
    pub data: Option<String>,
    pub split: SplitName,
}

#[derive(Debug, Serialize)]
struct Report<'a> {
    checkpoint: &'a str,
    data: &'a str,
    split: SplitName,
    metrics: Metrics,
}

pub fn run(common: &Common, args: &EvaluateArgs) -> Result<(), Failure> {
    let defaults = EvaluateConfig {
        checkpoint: args.checkpoint.as_ref().map(|p| p.display().to_string()),
        data: common.data.as_ref().map(|p| p.display().to_string()),
        split: args.split.unwrap_or(SplitName::Test),
    };
    let config: EvaluateConfig = resolve(&defaults, common.config.as_deref(), &common.sets, &[])?;
    let out = prepare_out(&common.out)?;
    echo(&out, &config)?;

    let ck_path = config
        .checkpoint
        .as_deref()
        .ok_or_else(|| Failure::Config(anyhow::anyhow!("--checkpoint is required")))?;
    let ck = Checkpoint::load(ck_path)?;
    let params = ck.parameters().data("checkpoint parameters")?;
    let data_path = config.data.clone().or_else(|| ck.config.data.path.clone());
    let table = load_table(data_path.as_deref())?;
    let model = &ck.config.model;
    if table.n_features() != model.input_dim() {
        return Err(dynpmnn::train::TrainError::DimMismatch {
            expected: model.input_dim(),
            got: table.n_features(),
        }
        .into());
    }

    let indices = split(
        table.rows(),
        ck.config.data.fractions,
        ck.config.data.split_seed,
    )
    .data("splitting")?;
    let rows = match config.split {
        SplitName::Train => &indices.train,
        SplitName::Validation => &indices.validation,
        SplitName::Test => &indices.test,
    };
    let standardizer = match &ck.standardizer {
        Some(s) => s.clone(),
        None => dynpmnn::data::Standardizer::fit(
            &table,
            &indices.train,
            dynpmnn::data::FitGuard::Strict(&indices),
        )
        .data("fitting standardizer")?,
    };
    let part = standardizer.apply(&table, rows);
    let metrics = evaluate(model, &params, &part, Some(&standardizer))?;

    let report = Report {
        checkpoint: ck_path,
        data: data_path.as_deref().unwrap_or_default(),
        split: config.split,
        metrics,
    };
    write_json(&out.join("metrics.json"), &report)?;
    println!(
        "{:?} split ({} rows): MSE {}, RMSE {} (raw RMSE {})",
        config.split, metrics.count, metrics.mse, metrics.rmse, metrics.rmse_raw
    );
    Ok(())
}
