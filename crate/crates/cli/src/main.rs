//! `auxspoof` command-line tool.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::CliError;

#[derive(Parser, Debug)]
#[command(name = "auxspoof", version, about = "Face anti-spoofing with depth and rPPG supervision")]
struct Cli {
    /// Only print warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set train.lr=0.001`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Shorthand for `--set train.seed=N`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct GenData {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub subjects: usize,
    /// Live clips per subject; each subject also gets this many print and replay clips.
    #[arg(long, default_value_t = 2)]
    pub clips: usize,
    #[arg(long, default_value_t = 150)]
    pub frames: usize,
    #[arg(long, default_value_t = 30.0)]
    pub fps: f64,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Index of the first subject, for disjoint train and test populations.
    #[arg(long, default_value_t = 0)]
    pub first_subject: usize,
}

#[derive(Args, Debug, Clone)]
pub struct RenderDepth {
    #[arg(long)]
    pub out: PathBuf,
    /// Take shape and pose from this clip directory.
    #[arg(long)]
    pub clip: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub frame: usize,
    /// Identity coefficients, comma separated (missing ones are zero).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub alpha_id: Vec<f64>,
    /// Expression coefficients, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub alpha_exp: Vec<f64>,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub yaw: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub pitch: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub roll: f64,
    #[arg(long, default_value_t = 64)]
    pub image_size: usize,
    #[arg(long, default_value_t = 32)]
    pub map_size: usize,
    #[arg(long)]
    pub basis: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct ExtractRppg {
    #[arg(long)]
    pub clip: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub basis: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct Train {
    #[command(flatten)]
    pub common: Common,
    /// Training dataset (overrides `data.train`).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct Eval {
    #[command(flatten)]
    pub common: Common,
    /// Precomputed `id,label,score` CSV.
    #[arg(long, conflicts_with_all = ["model", "data"])]
    pub scores: Option<PathBuf>,
    #[arg(long, requires = "data")]
    pub model: Option<PathBuf>,
    /// Evaluation dataset (overrides `data.eval`).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Operating threshold; the equal-error threshold of the set when absent.
    #[arg(long, allow_hyphen_values = true)]
    pub threshold: Option<f64>,
}

#[derive(Args, Debug, Clone)]
pub struct Score {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub clip: PathBuf,
    #[arg(long)]
    pub basis: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct Analyze {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    pub threshold: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic live/print/replay dataset.
    GenData(GenData),
    /// Render a ground-truth depth map for one shape and pose.
    RenderDepth(RenderDepth),
    /// Extract the rPPG spectrum of a clip.
    ExtractRppg(ExtractRppg),
    /// Train a model.
    Train(Train),
    /// Error rates and ROC for a score file or a model on a dataset.
    Eval(Eval),
    /// Liveness score of one clip.
    Score(Score),
    /// Frontal-map statistics, estimation errors and failure attribution.
    Analyze(Analyze),
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData(a) => commands::gen_data(&a),
        Command::RenderDepth(a) => commands::render_depth(&a),
        Command::ExtractRppg(a) => commands::extract_rppg(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Score(a) => commands::score(&a),
        Command::Analyze(a) => commands::analyze(&a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = if cli.quiet { log::LevelFilter::Warn } else { log::LevelFilter::Info };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
