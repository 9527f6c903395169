//! `mimic`: train, evaluate and inspect muscle-driven imitation policies.
//!
//! Exit codes: 0 ok, 1 runtime fault, 2 usage or schema error, 3 numerical abort.

mod commands;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

const VERSION: &str = concat!(
    env!("CARGO_PKG_VERSION"),
    " (clip schema v1, checkpoint v1, report v1, audit v1)"
);

#[derive(Parser, Debug)]
#[command(name = "mimic", version = VERSION, about = "Muscle-driven motion imitation toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Train a policy from a TOML/JSON config into a run directory
    Train(TrainArgs),
    /// Evaluate a checkpoint (or the reference itself) on clips
    Eval(EvalArgs),
    /// Retargeting-quality audit of clips
    Audit(AuditArgs),
    /// Gait-cycle activation profiles and EMG correlation
    Gait(GaitArgs),
    /// Resample and/or ground-correct a clip
    Convert(ConvertArgs),
    /// Environment throughput table
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// training config (.toml or .json)
    #[arg(long)]
    pub config: PathBuf,
    /// run directory (created)
    #[arg(long)]
    pub out: PathBuf,
    /// override the config seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// override the step budget
    #[arg(long)]
    pub total_steps: Option<u64>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// policy checkpoint (stem, .json or .bin)
    #[arg(long, required_unless_present = "oracle")]
    pub checkpoint: Option<PathBuf>,
    /// replay the reference kinematically instead of running a policy
    #[arg(long)]
    pub oracle: bool,
    /// `preset:<name>` or clip path; repeatable
    #[arg(long = "clip", required = true)]
    pub clips: Vec<String>,
    /// model name or file (default: the clip's model)
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long, default_value_t = 1)]
    pub episodes: usize,
    /// site deviation threshold override (m)
    #[arg(long)]
    pub delta_site: Option<f64>,
    /// report JSON path, `-` for stdout
    #[arg(long)]
    pub json: Option<String>,
    /// per-clip CSV path
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AuditArgs {
    #[arg(long = "clip", required = true)]
    pub clips: Vec<String>,
    #[arg(long)]
    pub model: Option<String>,
    /// reference clip for the RMSE column
    #[arg(long)]
    pub reference: Option<String>,
    #[arg(long)]
    pub json: Option<String>,
}

#[derive(Args, Debug)]
pub struct GaitArgs {
    #[arg(long, required_unless_present = "oracle")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub oracle: bool,
    #[arg(long)]
    pub clip: String,
    #[arg(long)]
    pub model: Option<String>,
    /// link whose contacts define the cycle
    #[arg(long, default_value = "foot_r")]
    pub foot: String,
    #[arg(long, default_value_t = 0.0)]
    pub min_duration: f64,
    #[arg(long, default_value_t = f64::INFINITY)]
    pub max_duration: f64,
    /// reference EMG CSV: muscle-name header, 101 rows
    #[arg(long)]
    pub emg: Option<PathBuf>,
    /// output directory for profiles.csv / correlation.csv
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ConvertArgs {
    #[arg(long)]
    pub input: String,
    /// output stem
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub rate: Option<f64>,
    #[arg(long)]
    pub ground_correct: bool,
    #[arg(long)]
    pub model: Option<String>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long, default_value = "walker7")]
    pub model: String,
    /// clip (default: the model's preset)
    #[arg(long)]
    pub clip: Option<String>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![1usize, 8])]
    pub n_env: Vec<usize>,
    /// thread counts (default: MM_THREADS or all cores)
    #[arg(long, value_delimiter = ',')]
    pub threads: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    pub steps: usize,
    #[arg(long, default_value_t = 2)]
    pub iters: usize,
    #[arg(long)]
    pub json: Option<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Train(a) => commands::train(a),
        Cmd::Eval(a) => commands::eval(a),
        Cmd::Audit(a) => commands::audit(a),
        Cmd::Gait(a) => commands::gait(a),
        Cmd::Convert(a) => commands::convert(a),
        Cmd::Bench(a) => commands::bench(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
