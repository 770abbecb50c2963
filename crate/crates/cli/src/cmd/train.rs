use std::fs::File;

use dynpmnn::checkpoint::Checkpoint;
use dynpmnn::train::train;
use log::info;

use super::{experiment_config, load_dataset};
use crate::failure::{Classify, Failure};
use crate::settings::{echo, prepare_out, write_json};
use crate::Common;

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const CURVE_FILE: &str = "loss_curve.csv";
pub const RECORD_FILE: &str = "run_record.json";

pub fn run(common: &Common) -> Result<(), Failure> {
    let config = experiment_config(common)?;
    let out = prepare_out(&common.out)?;
    echo(&out, &config)?;
    let data = load_dataset(&config)?;

    let outcome = train(&config.model, &data, &config.train)?;
    let record = &outcome.record;
    Checkpoint::new(
        config.clone(),
        &outcome.params,
        Some(data.standardizer.clone()),
    )
    .save(out.join(CHECKPOINT_FILE))?;
    let curve = File::create(out.join(CURVE_FILE)).internal("creating loss curve")?;
    record
        .write_loss_curve(curve)
        .internal("writing loss curve")?;
    write_json(&out.join(RECORD_FILE), record)?;

    if record.diverged {
        info!(
            "run diverged ({}); best-validation weights saved",
            record.divergence.as_deref().unwrap_or("unknown cause")
        );
    }
    println!(
        "{} ({} params): epochs {}, best epoch {}, best val MSE {}, test RMSE {} (raw {}), diverged {}",
        config.model.name(),
        record.param_count,
        record.epochs(),
        record.best_epoch,
        record.best_val_mse,
        record.test.rmse,
        record.test.rmse_raw,
        record.diverged
    );
    Ok(())
}
