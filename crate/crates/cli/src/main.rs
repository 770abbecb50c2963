mod cmd;
mod failure;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::failure::Failure;

#[derive(Parser, Debug)]
#[command(
    name = "dynpmnn",
    version,
    about = "Train and inspect FitzHugh-Nagumo dynamical networks"
)]
struct Cli {
    #[command(flatten)]
    common: Common,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// JSON config merged over the defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Dotted-key override such as `train.lr=1e-3`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub sets: Vec<String>,

    /// Output directory.
    #[arg(long, global = true, default_value = "runs")]
    pub out: PathBuf,

    /// Seeds initialization, shuffling and the data split.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Grid cells trained concurrently.
    #[arg(long, global = true, default_value_t = 1)]
    pub workers: usize,

    /// California Housing CSV.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,

    /// Architecture: pmnn, node or mlp.
    #[arg(long, global = true)]
    pub model: Option<String>,

    /// Log more (repeat for debug output).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one model and write its checkpoint, loss curve and run record.
    Train,
    /// Score a checkpoint on one split of the data.
    Evaluate(cmd::evaluate::EvaluateArgs),
    /// Train every cell of a hyperparameter grid.
    GridSearch(cmd::grid::GridArgs),
    /// Integrate FitzHugh-Nagumo trajectories and sample the nullclines.
    Simulate,
    /// Compare tape gradients with central finite differences.
    Gradcheck(cmd::gradcheck::GradcheckArgs),
}

fn run(cli: Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Train => cmd::train::run(&cli.common),
        Command::Evaluate(args) => cmd::evaluate::run(&cli.common, args),
        Command::GridSearch(args) => cmd::grid::run(&cli.common, args),
        Command::Simulate => cmd::simulate::run(&cli.common),
        Command::Gradcheck(args) => cmd::gradcheck::run(&cli.common, args),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    let level = match cli.common.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code() as u8)
        }
    }
}
