//! `advaug`: synthesize data, pre-train, jointly train and evaluate.
//!
//! Exit codes: 0 on success, 2 when a run fails, 64 on bad usage.

mod commands;
mod config;
mod error;
mod report;

use clap::{Parser, Subcommand};

use commands::{EvalArgs, HistogramArgs, PretrainAugArgs, PretrainPoseArgs, SynthArgs, TrainArgs};
use error::{CliError, EXIT_USAGE};

#[derive(Debug, Parser)]
#[command(name = "advaug", version, about = "Adversarial augmentation for heatmap pose estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic stick-figure dataset.
    Synth(SynthArgs),
    /// Train the pose network alone on random augmentations.
    PretrainPose(PretrainPoseArgs),
    /// Fit the augmentation network to loss-derived targets with the pose network frozen.
    PretrainAug(PretrainAugArgs),
    /// Joint adversarial training, or the random-augmentation baseline.
    Train(TrainArgs),
    /// PCK per joint at thresholds 0.1 to 0.5.
    Eval(EvalArgs),
    /// Validation loss per rotation bin, optionally beside the predicted rotation policy.
    LossHistogram(HistogramArgs),
}

fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::PretrainPose(a) => commands::pretrain_pose_cmd(a),
        Command::PretrainAug(a) => commands::pretrain_aug_cmd(a),
        Command::Train(a) => commands::train_cmd(a),
        Command::Eval(a) => commands::eval_cmd(a),
        Command::LossHistogram(a) => commands::loss_histogram_cmd(a),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
