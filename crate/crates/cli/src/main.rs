mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use manip2nav_core::rl::Variant;
use manip2nav_core::simenv::TaskKind;

#[derive(Parser)]
#[command(name = "manip2nav", version, about = "Manipulability-prior pixel-action learning for manipulate-to-navigate tasks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a workspace manipulability map and its pixel prior.
    Mapgen(MapgenArgs),
    /// Train every (variant, seed) pair of a run config.
    Train(TrainArgs),
    /// Greedy evaluation of a checkpoint.
    Eval(EvalArgs),
    /// Merge learning curves of finished runs.
    Compare(CompareArgs),
}

#[derive(Args)]
pub struct MapgenArgs {
    #[arg(long)]
    pub chain: PathBuf,
    #[arg(long)]
    pub camera: PathBuf,
    /// Task config; sets the action stride and the scene under the overlay.
    #[arg(long)]
    pub task: Option<PathBuf>,
    /// Region in the base frame: `xmin,ymin,zmin,xmax,ymax,zmax`.
    #[arg(long)]
    pub region: Option<String>,
    #[arg(long, default_value_t = 0.05)]
    pub cell_size: f64,
    #[arg(long, default_value_t = 3)]
    pub samples: usize,
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the output directory of the run config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Train only this seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Train only this variant.
    #[arg(long)]
    pub variant: Option<Variant>,
    /// Overrides the trainer's step budget.
    #[arg(long)]
    pub total_steps: Option<u64>,
    /// Continue runs from their last checkpoint.
    #[arg(long)]
    pub resume: bool,
    /// Stop each run after this many global steps, leaving it resumable.
    #[arg(long)]
    pub stop_after: Option<u64>,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Run config supplying chain, camera, task and feature settings.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub task: Option<TaskKind>,
    #[arg(long)]
    pub episodes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Defaults to the variant recorded in the checkpoint.
    #[arg(long)]
    pub variant: Option<Variant>,
    /// Report path; defaults to a file next to the checkpoint.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct CompareArgs {
    /// Run configs whose outputs are merged.
    #[arg(required = true)]
    pub configs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = manip2nav_core::metrics::DEFAULT_WINDOW)]
    pub window: usize,
    /// Number of shared step bins.
    #[arg(long, default_value_t = 100)]
    pub bins: usize,
    /// Accepted for uniformity; comparison is deterministic.
    #[arg(long)]
    pub seed: Option<u64>,
}

pub enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Mapgen(a) => commands::mapgen(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Compare(a) => commands::compare(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}
