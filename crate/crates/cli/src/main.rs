//! `stwg`: file-based front end for event-graph inference and forecasting.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use stwg::{Error, ErrorKind};

#[derive(Parser, Debug)]
#[command(name = "stwg", version, about = "Event-graph inference and graph-structured forecasting")]
pub struct Cli {
    /// Seed for every random choice; overrides a seed in the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// JSON configuration for the command.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Cap on worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Direction {
    Forward,
    Inverse,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Sample a synthetic Hawkes model and events, or a diffusive grid series.
    Simulate {
        /// Simulate a grid series instead of events.
        #[arg(long)]
        grid: bool,
        /// Also write per-bin counts with this bin width (hours).
        #[arg(long)]
        bin_width: Option<f64>,
        /// Bins per day for the count series.
        #[arg(long, default_value_t = 24)]
        period: usize,
    },
    /// Fit a Hawkes model to events by penalized EM.
    Infer {
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        num_nodes: usize,
        /// Observation horizon; defaults to the end of the last event's bin.
        #[arg(long)]
        horizon: Option<f64>,
        /// Bin width used for the default horizon.
        #[arg(long, default_value_t = 1.0)]
        bin_width: f64,
        /// Kernel rate.
        #[arg(long, conflicts_with = "w_grid")]
        w: Option<f64>,
        /// Comma-separated kernel rates to search.
        #[arg(long, value_delimiter = ',')]
        w_grid: Vec<f64>,
        /// Also write a graph keeping this fraction of off-diagonal pairs.
        #[arg(long)]
        sparsity: Option<f64>,
        /// Keep only each node's strongest incoming edges before thresholding.
        #[arg(long)]
        knn_init: Option<usize>,
        /// Number of activity classes assigned to graph nodes.
        #[arg(long, default_value_t = 1)]
        classes: usize,
    },
    /// Score an inferred excitation matrix against the ground truth.
    EvalGraph {
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        inferred: PathBuf,
        /// `null` or `gt+K`.
        #[arg(long, default_value = "null")]
        prior: String,
    },
    /// Map a raw count series to the super-resolved cumulative form or back.
    Augment {
        #[arg(long)]
        series: PathBuf,
        #[arg(long, value_enum, default_value_t = Direction::Forward)]
        direction: Direction,
        /// `drop`, `zero-pad` or `error` for a partial final day.
        #[arg(long, default_value = "drop")]
        trailing: String,
    },
    /// Train a forecaster described by the config file.
    Train,
    /// One-step forecasts from a checkpoint.
    Forecast {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Raw count series.
        #[arg(long)]
        series: PathBuf,
        /// Graph for graph models; the joint model needs none.
        #[arg(long)]
        graph: Option<PathBuf>,
        /// First raw step to forecast; defaults to the end of training.
        #[arg(long)]
        start: Option<usize>,
        /// One past the last raw step; defaults to the end of the series.
        #[arg(long)]
        end: Option<usize>,
    },
    /// Metrics from a forecast directory.
    Evaluate {
        /// Directory holding `node_<k>.csv` files.
        #[arg(long)]
        forecast: PathBuf,
        #[arg(long, default_value_t = 24)]
        period: usize,
        /// Any of `rmse`, `precision`, `spectrum`.
        #[arg(long, value_delimiter = ',', default_value = "rmse,precision,spectrum")]
        metrics: Vec<String>,
        #[arg(long, default_value_t = 3)]
        max_delay: usize,
        #[arg(long, default_value_t = 2)]
        max_threshold: usize,
    },
    /// Recovery AUC over sparsities and priors.
    Table1,
}

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numeric => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
