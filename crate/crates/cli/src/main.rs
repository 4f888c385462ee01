mod commands;
mod run_dir;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

/// Thermal-to-visible face frontalization: data, training, synthesis and evaluation.
#[derive(Debug, Parser)]
#[command(name = "thermofront", version, about)]
struct Cli {
    /// Root under which each command creates a timestamped run directory.
    #[arg(long, global = true, env = "THERMOFRONT_OUTPUT_ROOT", default_value = "runs")]
    output_root: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a synthetic paired thermal/visible dataset.
    GenData(GenDataArgs),
    /// Train the frontalization networks.
    Train(TrainArgs),
    /// Frontalize images with a trained checkpoint.
    Synthesize(SynthesizeArgs),
    /// Score the verification protocol and report ROC metrics.
    Evaluate(EvaluateArgs),
    /// Train and evaluate every rung of the cumulative ablation ladder.
    Ablate(AblateArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct OutArgs {
    /// Write into this directory instead of a timestamped one under the output root.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct ConfigArgs {
    /// TOML training config; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `section.key=value` assignments applied after the config file.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Shorthand for `--override steps=N`.
    #[arg(long)]
    pub steps: Option<u64>,
    /// Shorthand for `--override seed=N`.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    All,
}

#[derive(Debug, Args, Serialize)]
pub struct GenDataArgs {
    /// Number of identities (pair sampling needs at least 2).
    #[arg(long, default_value_t = 16, value_parser = clap::value_parser!(u64).range(2..))]
    pub identities: u64,
    /// Comma-separated profile yaw angles in degrees.
    #[arg(
        long,
        value_delimiter = ',',
        allow_hyphen_values = true,
        default_value = "-60,-30,30,60"
    )]
    pub poses: Vec<f64>,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Dataset manifest CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Identities to train on.
    #[arg(long, value_enum, default_value_t = Split::Train)]
    pub split: Split,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Print a loss line every N steps (0 disables).
    #[arg(long, default_value_t = 10)]
    pub log_every: u64,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args, Serialize)]
#[command(group(clap::ArgGroup::new("source").required(true).multiple(true).args(["inputs", "pose_sweep"])))]
pub struct SynthesizeArgs {
    /// Checkpoint file written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Images to frontalize, one output PNG each.
    #[arg(long = "input", value_name = "IMAGE")]
    pub inputs: Vec<PathBuf>,
    /// Render one identity across every pose of a dataset as a grid.
    #[arg(long, requires = "data")]
    pub pose_sweep: bool,
    /// Dataset manifest for `--pose-sweep`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Identity for `--pose-sweep`; defaults to the first in the manifest.
    #[arg(long, requires = "pose_sweep")]
    pub identity: Option<String>,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args, Serialize)]
#[command(group(clap::ArgGroup::new("model").required(true).args(["checkpoint", "raw"])))]
pub struct EvaluateArgs {
    /// Dataset manifest CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Frontalize probes with this checkpoint.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Embed raw probes without frontalization.
    #[arg(long)]
    pub raw: bool,
    /// Identities to evaluate on.
    #[arg(long, value_enum, default_value_t = Split::Test)]
    pub split: Split,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct AblateArgs {
    /// Dataset manifest CSV; rungs train on its train split and evaluate on the test split.
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

/// Bad arguments detected after parsing; exits with the usage status.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// The error chain joined by `: `, skipping causes already quoted by their parent.
fn describe(e: &anyhow::Error) -> String {
    let mut out = e.to_string();
    let mut last = out.clone();
    for cause in e.chain().skip(1) {
        let text = cause.to_string();
        if !last.contains(&text) {
            out.push_str(": ");
            out.push_str(&text);
        }
        last = text;
    }
    out
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::GenData(a) => commands::gen_data(&cli.output_root, a),
        Command::Train(a) => commands::train(&cli.output_root, a),
        Command::Synthesize(a) => commands::synthesize(&cli.output_root, a),
        Command::Evaluate(a) => commands::evaluate(&cli.output_root, a),
        Command::Ablate(a) => commands::ablate(&cli.output_root, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(1)
        }
    }
}
