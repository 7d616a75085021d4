//! `tdcnn`: synthesize data, preprocess, train, cross-validate, evaluate,
//! predict, compare hidden-layer topologies and self-check gradients.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tdcnn::arch::{HiddenArch, DEFAULT_INPUT};
use tdcnn::train::cv::{CvMode, DEFAULT_FOLDS};
use tdcnn::train::Precision;

#[derive(Parser, Debug)]
#[command(name = "tdcnn", version, about = "Brain-MRI tumor classifier built from scratch")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic labelled image set with a manifest
    Synth(SynthArgs),
    /// Run the preprocessing pipeline over a manifest and write the results
    Preprocess(PreprocessArgs),
    /// Train one model and save a checkpoint, epoch log and curves
    Train(TrainCmd),
    /// k-fold cross-validation, one fresh model per fold
    Crossval(CrossvalArgs),
    /// Score a checkpoint against a labelled manifest
    Evaluate(EvaluateArgs),
    /// Classify individual images with a checkpoint
    Predict(PredictArgs),
    /// Train all three hidden-layer topologies under one config
    CompareArchs(CompareArgs),
    /// Finite-difference check of every backward pass
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Output directory (images/ and manifest.csv are created inside)
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 500)]
    healthy: usize,
    #[arg(long, default_value_t = 500)]
    tumor: usize,
    /// Square image side in pixels
    #[arg(long, default_value_t = 64)]
    size: usize,
    /// Standard deviation of the additive pixel noise
    #[arg(long, default_value_t = 8.0)]
    noise_stddev: f64,
    /// Intensity added inside the tumor ellipse
    #[arg(long, default_value_t = 60.0)]
    tumor_delta: f64,
    #[arg(long, default_value_t = 3.0)]
    radius_min: f64,
    #[arg(long, default_value_t = 8.0)]
    radius_max: f64,
    /// Consecutive images sharing one subject id
    #[arg(long, default_value_t = 10)]
    subject_block: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct PreprocessArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory for processed images and their manifest
    #[arg(long)]
    out: PathBuf,
    /// Side length images are resized to
    #[arg(long, default_value_t = DEFAULT_INPUT)]
    input_size: usize,
}

/// Optimization settings shared by every training command.
#[derive(Args, Debug, Clone)]
struct TrainArgs {
    #[arg(long, default_value_t = 40)]
    epochs: usize,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    /// Adam step size
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    /// Focal-loss focusing parameter (0 gives cross-entropy)
    #[arg(long, default_value_t = 2.0)]
    gamma: f64,
    /// Per-class loss weights: healthy,tumor
    #[arg(long, value_delimiter = ',', default_value = "1,1")]
    class_weights: Vec<f64>,
    /// Side length images are resized to
    #[arg(long, default_value_t = DEFAULT_INPUT)]
    input_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Scalar type for training: f32 or f64
    #[arg(long, default_value = "f32")]
    precision: Precision,
    /// Stop after this many epochs without a lower validation loss [default: off]
    #[arg(long)]
    patience: Option<usize>,
    /// Add rotated and flipped copies of every training image
    #[arg(long)]
    augment: bool,
    /// Share of the training set held out for validation curves
    #[arg(long, default_value_t = 0.1)]
    val_fraction: f64,
}

#[derive(Args, Debug)]
struct TrainCmd {
    #[arg(long)]
    manifest: PathBuf,
    /// Explicit validation manifest (replaces the held-out fraction)
    #[arg(long)]
    val_manifest: Option<PathBuf>,
    /// Output directory for model.ckpt, epochs.csv and curves.svg
    #[arg(long)]
    out: PathBuf,
    /// Hidden-layer topology: triangular, rectangular or recto-triangular
    #[arg(long, default_value = "recto-triangular")]
    arch: HiddenArch,
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(Args, Debug)]
struct CrossvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Metrics CSV to write
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_FOLDS)]
    folds: usize,
    /// Fold assignment: random or subject
    #[arg(long, default_value = "random")]
    cv_mode: CvMode,
    /// Hidden-layer topology: triangular, rectangular or recto-triangular
    #[arg(long, default_value = "recto-triangular")]
    arch: HiddenArch,
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Must match the checkpoint's input size [default: from checkpoint]
    #[arg(long)]
    input_size: Option<usize>,
    /// Optional metrics CSV to write
    #[arg(long)]
    out: Option<PathBuf>,
    /// Scalar type for inference: f32 or f64
    #[arg(long, default_value = "f32")]
    precision: Precision,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// PGM images to classify
    #[arg(required = true)]
    images: Vec<PathBuf>,
    /// Scalar type for inference: f32 or f64
    #[arg(long, default_value = "f32")]
    precision: Precision,
}

#[derive(Args, Debug)]
struct CompareArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Held-out test manifest [default: a seeded split of --manifest]
    #[arg(long)]
    test_manifest: Option<PathBuf>,
    /// Share of --manifest held out for testing when no test manifest is given
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
    /// Comparison CSV to write
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Parameters sampled in the whole-model check
    #[arg(long, default_value_t = 20)]
    samples: usize,
    /// Corrupt the conv backward pass to prove the check can fail
    #[arg(long, hide = true)]
    inject_conv_bug: bool,
}

/// A problem with the invocation rather than with the data.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// A numeric check that ran to completion but did not pass.
#[derive(Debug)]
pub struct NumericFailure(pub String);

impl std::fmt::Display for NumericFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for NumericFailure {}

/// Anything that is neither a usage problem nor a numeric failure is
/// treated as a data error.
fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 1;
    }
    if err.downcast_ref::<NumericFailure>().is_some() {
        return 3;
    }
    match err.downcast_ref::<tdcnn::Error>() {
        Some(e) if e.is_numeric() => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Preprocess(a) => commands::preprocess(a),
        Command::Train(a) => commands::train(a),
        Command::Crossval(a) => commands::crossval(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Predict(a) => commands::predict(a),
        Command::CompareArchs(a) => commands::compare_archs(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
