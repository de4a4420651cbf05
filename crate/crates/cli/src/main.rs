//! `imagery`: synthesis, preprocessing, training, evaluation, streaming and
//! online sessions from the command line.

mod commands;
mod config;
mod exit;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "imagery", version, about = "EEG imagery decoding and simulated pick-and-place")]
pub struct Cli {
    /// TOML run configuration; flags override its entries.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Default directory for relative outputs.
    #[arg(long, global = true, env = "IMAGERY_DATA_DIR")]
    pub data_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded synthetic session.
    Synth(SynthArgs),
    /// Filter, re-reference, epoch and write a DE feature table.
    Preprocess(PreprocessArgs),
    /// Train a (kind x profile) grid and print its accuracy table.
    Train(TrainArgs),
    /// Evaluate saved models on recordings.
    Eval(EvalArgs),
    /// Replay a recording over TCP to one client.
    Serve(ServeArgs),
    /// Run the online pipeline against a replayed or live stream.
    RunOnline(OnlineArgs),
    /// System-level Monte-Carlo and grasp calibration report.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// `vi` or `mi`.
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub separability: Option<f64>,
    /// Generate the online script with this many trials instead.
    #[arg(long)]
    pub online: Option<usize>,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[arg(long, short)]
    pub input: PathBuf,
    #[arg(long)]
    pub profile: Option<String>,
    /// Fit ICA and drop components correlated with EOG/ECG.
    #[arg(long)]
    pub ica: bool,
    /// `imagery` or `perception`.
    #[arg(long)]
    pub phase: Option<String>,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// One or more session containers of the same task.
    #[arg(long = "input", short, required = true)]
    pub inputs: Vec<PathBuf>,
    /// Comma-separated decoder kinds, or `all`.
    #[arg(long)]
    pub kinds: Option<String>,
    /// Comma-separated profiles (f40, f60, f100), or `all`.
    #[arg(long)]
    pub profiles: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
    #[arg(long)]
    pub ica: bool,
    #[arg(long)]
    pub phase: Option<String>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long = "input", short, required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long = "model", short, required = true)]
    pub models: Vec<PathBuf>,
    #[arg(long)]
    pub phase: Option<String>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, short)]
    pub input: PathBuf,
    #[arg(long)]
    pub host: Option<String>,
    #[arg(long)]
    pub port: Option<u16>,
    /// `realtime`, `unpaced` or `<factor>x`.
    #[arg(long)]
    pub clock: Option<String>,
    #[arg(long)]
    pub chunk: Option<usize>,
}

#[derive(Debug, Args)]
pub struct OnlineArgs {
    #[arg(long, required_unless_present = "oracle")]
    pub vi_model: Option<PathBuf>,
    #[arg(long, required_unless_present = "oracle")]
    pub mi_model: Option<PathBuf>,
    /// Replace both decoders with the scripted truth.
    #[arg(long, conflicts_with_all = ["vi_model", "mi_model"])]
    pub oracle: bool,
    /// Frozen ICA model (JSON) applied before feature extraction.
    #[arg(long)]
    pub ica_model: Option<PathBuf>,
    /// Replay this container in-process.
    #[arg(long, conflicts_with = "connect", required_unless_present = "connect")]
    pub replay: Option<PathBuf>,
    /// Connect to a running `serve`.
    #[arg(long)]
    pub connect: Option<String>,
    /// Defaults to every scripted trial of a replay, or 50 for a live stream.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Robot simulator seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub profile: Option<String>,
    /// `majority` or `mean`.
    #[arg(long)]
    pub aggregation: Option<String>,
    /// `modeled` or `measured`.
    #[arg(long)]
    pub timing: Option<String>,
    #[arg(long)]
    pub clock: Option<String>,
    /// Use a remote executor speaking the line protocol at this address.
    #[arg(long)]
    pub robot_addr: Option<String>,
    #[arg(long, short)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long, default_value_t = 5000)]
    pub trials: usize,
    #[arg(long, default_value_t = 10_000)]
    pub grasp_attempts: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Component rates `vi,grasp,mi,place`.
    #[arg(long)]
    pub rates: Option<String>,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::from(exit::OK),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit::code_for(&e))
        }
    }
}
