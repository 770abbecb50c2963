use std::fs;
use std::path::PathBuf;

use clap::Args;
use dynpmnn::train::{grid_search, GridOptions, SearchSpace};
use log::info;

use super::{experiment_config, load_dataset};
use crate::failure::{Classify, Failure};
use crate::settings::{echo, prepare_out};
use crate::Common;

pub const PMNN_SPACE: &str = include_str!("../../spaces/pmnn.json");
pub const NODE_SPACE: &str = include_str!("../../spaces/node.json");
pub const MLP_SPACE: &str = include_str!("../../spaces/mlp.json");

#[derive(Args, Debug)]
pub struct GridArgs {
    /// JSON object of value arrays per dotted key; defaults to the shipped
    /// space for the chosen model.
    #[arg(long)]
    pub space: Option<PathBuf>,

    /// Only run the first N cells.
    #[arg(long)]
    pub max_cells: Option<usize>,
}

pub fn run(common: &Common, args: &GridArgs) -> Result<(), Failure> {
    let base = experiment_config(common)?;
    let text = match &args.space {
        Some(path) => fs::read_to_string(path).config(&format!("reading {}", path.display()))?,
        None => match base.model.name() {
            "pmnn" => PMNN_SPACE.to_string(),
            "node" => NODE_SPACE.to_string(),
            _ => MLP_SPACE.to_string(),
        },
    };
    let space = SearchSpace::from_json(&text)?;
    let out = prepare_out(&common.out)?;
    echo(&out, &base)?;
    fs::write(out.join("space.json"), &text).internal("writing space")?;
    info!("{} cells over {:?}", space.len(), space.keys());

    let data = load_dataset(&base)?;
    let options = GridOptions {
        workers: common.workers.max(1),
        max_cells: args.max_cells,
    };
    let report = grid_search(&base, &space, &data, &options)?;
    report.persist(&out)?;

    let skipped = report
        .ranked
        .iter()
        .filter(|c| matches!(c.status, dynpmnn::train::CellStatus::Skipped(_)))
        .count();
    println!("{} cells, {} skipped", report.ranked.len(), skipped);
    match report.best() {
        Some(best) => {
            let r = best.record().expect("best cell trained");
            println!(
                "best cell {}: {:?} val MSE {} test RMSE {}",
                best.index,
                best.assignment
                    .iter()
                    .map(|(k, v)| format!("{k}={v}"))
                    .collect::<Vec<_>>(),
                r.best_val_mse,
                r.test.rmse
            );
        }
        None => println!("no cell trained"),
    }
    Ok(())
}
