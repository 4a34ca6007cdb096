//! `pairdist` command-line entry point.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "pairdist", version, about = "Pairwise distance-matrix CNNs for pathological speech detection")]
struct Cli {
    /// Log progress (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic AP corpus.
    Synth(SynthArgs),
    /// Turn a manifest of 16 kHz WAV files into log-STFT feature files.
    Features(FeaturesArgs),
    /// Stratified cross-validation over one or more seeds.
    Cv(RunArgs),
    /// Train the configured model on a single fold.
    Train(TrainArgs),
    /// Score one test speaker against healthy references.
    Predict(PredictArgs),
    /// Tabulate metrics files.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 20)]
    pub healthy: usize,
    #[arg(long, default_value_t = 20)]
    pub dysarthric: usize,
    #[arg(long, default_value_t = 10)]
    pub items: usize,
    #[arg(long, default_value_t = 40)]
    pub min_frames: usize,
    #[arg(long, default_value_t = 90)]
    pub max_frames: usize,
    #[arg(long, default_value_t = 1.0)]
    pub severity: f32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct FeaturesArgs {
    /// CSV with `speaker_id,label,item_id,path` rows pointing at WAV files.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Settings shared by `cv` and `train`. Flags override the config file.
#[derive(Args, Debug, Default)]
pub struct RunArgs {
    /// `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Comma-separated training seeds.
    #[arg(long, alias = "seed")]
    pub seeds: Option<String>,
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub model: Option<String>,
    /// Fixed representation length.
    #[arg(long = "S", alias = "s")]
    pub frames: Option<usize>,
    #[arg(long)]
    pub init: Option<String>,
    #[arg(long)]
    pub features: Option<String>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// Any other config key, as `key=value`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Fold whose speakers are held out.
    #[arg(long, default_value_t = 0)]
    pub fold: usize,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    /// Manifest holding the reference speakers (and the test speaker unless
    /// `--test-manifest` is given).
    #[arg(long)]
    pub manifest: PathBuf,
    /// Manifest with the test speaker's utterances.
    #[arg(long)]
    pub test_manifest: Option<PathBuf>,
    /// Test speaker id; required when it cannot be inferred.
    #[arg(long)]
    pub speaker: Option<String>,
    #[arg(long, default_value = "ap")]
    pub features: String,
    /// Print every pair's (or segment's) probability.
    #[arg(long)]
    pub per_pair: bool,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Metrics JSON files.
    #[arg(required = true)]
    pub metrics: Vec<PathBuf>,
    /// Also write the table as CSV here.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Features(a) => commands::features(&a),
        Command::Cv(a) => commands::cv(&a),
        Command::Train(a) => commands::train(&a),
        Command::Predict(a) => commands::predict(&a),
        Command::Report(a) => commands::report(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_user_error() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}
