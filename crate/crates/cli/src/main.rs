//! `ridership`: stage-by-stage forecasting pipeline over a working directory.

mod artifacts;
mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "ridership", version, about = "Station entry forecasting from calendar and event features")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// TOML config file; flags take precedence over its keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory holding every artifact [default: work]
    #[arg(long, global = true)]
    pub workdir: Option<PathBuf>,
    /// Master seed; per-task seeds are derived from it [default: 0]
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads [default: all cores]
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Feature set: D1, D2, D3 or D4 [default: D4]
    #[arg(long, global = true)]
    pub features: Option<String>,
    /// Model family: ha, lr, rf or gbdt [default: rf]
    #[arg(long, global = true)]
    pub model: Option<String>,
    /// Fare classes (SMP, RMP, BT, OP, ALL), comma separated [default: ALL]
    #[arg(long, global = true, value_delimiter = ',')]
    pub fare_class: Option<Vec<String>>,
    /// Restrict to these stations, comma separated
    #[arg(long, global = true, value_delimiter = ',')]
    pub stations: Option<Vec<String>>,
    /// START..END, inclusive [default: 2015-01-01..2016-12-31]
    #[arg(long, global = true)]
    pub train_range: Option<String>,
    /// START..END, inclusive [default: 2017-01-01..2017-12-31]
    #[arg(long, global = true)]
    pub test_range: Option<String>,
    /// Assumed duration of events without an end time, in minutes [default: 120]
    #[arg(long, global = true)]
    pub default_event_duration: Option<i64>,
    #[arg(long, global = true)]
    pub ticketing: Option<PathBuf>,
    #[arg(long, global = true)]
    pub events: Option<PathBuf>,
    #[arg(long, global = true)]
    pub calendar: Option<PathBuf>,
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,

    /// Grid file for `tune` (TOML, one table per family)
    #[arg(long, global = true)]
    pub grid: Option<PathBuf>,
    /// Wall-clock cap per (station, family, feature set), e.g. `2d`, `90s`
    #[arg(long, global = true)]
    pub budget: Option<String>,
    /// Hyperparameter for `train`, NAME=VALUE; repeatable
    #[arg(long = "param", global = true)]
    pub param: Vec<String>,
    /// Apply the year-over-year trend factor to predictions
    #[arg(long, global = true, conflicts_with = "no_trend")]
    pub trend: bool,
    #[arg(long, global = true)]
    pub no_trend: bool,
    /// Stations whose trend factor is pinned to 1, comma separated
    #[arg(long, global = true, value_delimiter = ',')]
    pub trend_exclude: Vec<String>,
    /// Reference years A,B of the trend factor [default: last two training years]
    #[arg(long, global = true, value_delimiter = ',')]
    pub trend_years: Option<Vec<i32>>,
    /// MAPE threshold v; repeatable [default: 150]
    #[arg(long, global = true, action = ArgAction::Append)]
    pub mape_threshold: Vec<f64>,
    /// Evaluation period: all, event or non-event [default: every slice]
    #[arg(long, global = true)]
    pub period: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic data set into <workdir>/data
    Synth(SynthArgs),
    /// Parse and validate the input files and aggregate daily demand
    Ingest,
    /// Encode the design matrix of the chosen feature set
    Features,
    /// Grid-search hyperparameters per station with cross-validation
    Tune,
    /// Fit one model per (station, fare class)
    Train {
        /// Use the per-station best spec found by `tune`
        #[arg(long)]
        tuned: bool,
    },
    /// Predict the test range with trained models
    Predict,
    /// Compute sliced error reports from predictions
    Evaluate,
    /// Mean-decrease-impurity importance of tree models
    Importance,
    /// Summarize every evaluation into an SVG and a CSV
    Report,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 5)]
    pub n_stations: usize,
    #[arg(long, default_value_t = 2)]
    pub n_event_stations: usize,
    #[arg(long, default_value_t = 3)]
    pub n_categories: usize,
    #[arg(long, default_value = "2015-01-01..2017-12-31")]
    pub range: String,
    /// Yearly demand growth multiplier applied to every station
    #[arg(long, default_value_t = 1.0)]
    pub growth: f64,
    /// Expected events per event-hosting station per week
    #[arg(long)]
    pub events_per_week: Option<f64>,
    /// Count noise: poisson or none
    #[arg(long, default_value = "poisson")]
    pub noise: String,
    /// Output directory [default: <workdir>/data]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
