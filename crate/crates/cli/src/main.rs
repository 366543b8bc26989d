//! `twostream` command-line front end.
//!
//! Exit codes: 0 success, 1 gradient check above tolerance, 2 configuration
//! or usage error, 3 data error (missing, malformed or inconsistent input),
//! 4 runtime failure.

mod commands;
mod config;
mod failure;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use twostream::data::{Coupling, SplitScheme};
use twostream::gradcheck::Precision;
use twostream::{ConvPooling, Variant};

use crate::failure::Failure;

#[derive(Debug, Parser)]
#[command(
    name = "twostream",
    version,
    about = "Two-stream LSTM fusion over per-frame CNN features"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the 1-based frame numbers selected from a video.
    Sample(SampleArgs),
    /// Generate a synthetic two-stream dataset (feature files plus manifest).
    Synth(SynthArgs),
    /// Compare analytic gradients with finite differences for every variant.
    Gradcheck(GradcheckArgs),
    /// Train over one fold or a full cross-validation plan.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a test set.
    Eval(EvalArgs),
    /// Print the header and checksum of a feature file or checkpoint.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
struct SampleArgs {
    /// Number of frames in the video.
    #[arg(long)]
    frames: usize,
    /// Number of frames to select.
    #[arg(long)]
    target: usize,
    /// Pad videos shorter than the target by repeating the last frame instead of failing.
    #[arg(long)]
    pad_repeat: bool,
    /// Accepted for uniformity; selection involves no randomness.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Output directory [env: TWOSTREAM_OUT; default: synth].
    #[arg(long, env = "TWOSTREAM_OUT", hide_env = true)]
    out: Option<PathBuf>,
    /// How labels depend on the streams: conv_only, fc_only or xor.
    #[arg(long, default_value = "xor")]
    coupling: Coupling,
    /// Number of classes.
    #[arg(long, default_value_t = 3)]
    classes: usize,
    /// Videos per class.
    #[arg(long, default_value_t = 10)]
    per_class: usize,
    /// Frames per video.
    #[arg(long, default_value_t = 10)]
    frames: usize,
    /// Conv feature size per frame.
    #[arg(long, default_value_t = 16)]
    conv_dim: usize,
    /// Fc feature size per frame.
    #[arg(long, default_value_t = 16)]
    fc_dim: usize,
    /// Number of recording groups, assigned round-robin.
    #[arg(long, default_value_t = 5)]
    groups: usize,
    /// Number of predefined split tags, assigned round-robin.
    #[arg(long, default_value_t = 3)]
    splits: usize,
    /// Standard deviation of the background noise.
    #[arg(long, default_value_t = 0.5)]
    noise: f64,
    /// Generator seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    /// Seed for model initialisation, inputs and dropout masks.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    /// Pass when every variant's max relative error is below this.
    #[arg(long, default_value_t = 1e-5)]
    tolerance: f64,
    /// Arithmetic for the differenced loss: extended or double.
    #[arg(long, default_value = "extended", value_parser = parse_precision)]
    precision: Precision,
    /// Check a single variant instead of all four.
    #[arg(long)]
    variant: Option<Variant>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// TOML run configuration; flags given here override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Manifest listing the feature files.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Run directory [env: TWOSTREAM_OUT; default: runs].
    #[arg(long, env = "TWOSTREAM_OUT", hide_env = true)]
    out: Option<PathBuf>,
    /// Model variant: conv_l, fc_l, fu_1 or fu_2 [default: fu_2].
    #[arg(long)]
    variant: Option<Variant>,
    /// Fold plan: loocv_video, loocv_group or predefined [default: loocv_video].
    #[arg(long)]
    scheme: Option<SplitScheme>,
    /// Run only the fold with this name (a video id, group id or split tag).
    #[arg(long)]
    fold: Option<String>,
    /// Seed for initialisation, shuffling and dropout [default: 0].
    #[arg(long)]
    seed: Option<u64>,
    /// Hidden size of the stream LSTMs [default: 100].
    #[arg(long)]
    hidden: Option<usize>,
    /// Output size of the per-timestep merge in fu_2 [default: 100].
    #[arg(long)]
    merge: Option<usize>,
    /// Dropout rate in [0, 1) [default: 0.25].
    #[arg(long)]
    dropout: Option<f64>,
    /// Conv map reduction: spatial_average or flatten [default: spatial_average].
    #[arg(long)]
    pooling: Option<ConvPooling>,
    /// Learning rate [default: 0.001].
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Mini-batch size [default: 16].
    #[arg(long)]
    batch_size: Option<usize>,
    /// Training epochs per fold [default: 30].
    #[arg(long)]
    epochs: Option<usize>,
    /// Rescale batch gradients to at most this global L2 norm [default: off].
    #[arg(long)]
    clip_norm: Option<f64>,
    /// Optimizer: adam or sgd [default: adam].
    #[arg(long)]
    optimizer: Option<String>,
    /// Also keep a checkpoint after every epoch.
    #[arg(long)]
    epoch_checkpoints: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Manifest listing the feature files.
    #[arg(long)]
    manifest: PathBuf,
    /// Fold plan used to pick the test set (requires --fold).
    #[arg(long, requires = "fold")]
    scheme: Option<SplitScheme>,
    /// Evaluate on this fold's test videos only; otherwise on every manifest entry.
    #[arg(long, requires = "scheme")]
    fold: Option<String>,
    /// Directory for confusion matrix files; without it only a metrics line is printed.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Accepted for uniformity; evaluation involves no randomness.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct InspectArgs {
    /// A `.tsff` feature file or `.fsm` checkpoint.
    file: PathBuf,
    /// Accepted for uniformity; inspection involves no randomness.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_precision(s: &str) -> Result<Precision, String> {
    match s {
        "extended" => Ok(Precision::Extended),
        "double" => Ok(Precision::Double),
        _ => Err(format!("unknown precision {s:?} (expected extended or double)")),
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Sample(a) => commands::sample(a.frames, a.target, a.pad_repeat),
        Command::Synth(a) => commands::synth(&a),
        Command::Gradcheck(a) => commands::gradcheck(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Inspect(a) => commands::inspect(&a.file),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
