//! `waveguard` — train, apply, and evaluate budgeted image perturbations.
//!
//! Exit codes are a stable contract: 0 success, 1 runtime failure,
//! 2 usage or config error (including all flag parsing).

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use waveguard::{Error, Result};

mod commands;
mod corpus;
mod manifest;

use commands::*;

#[derive(Parser)]
#[command(
    name = "waveguard",
    version,
    about = "Budgeted image-protection pipeline: training, batch protection, and evaluation"
)]
struct Cli {
    /// Worker-thread cap. The pipeline reduces in fixed order, so results
    /// are identical for any value; 1 is the reproducibility baseline.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a perturbation generator on an image corpus.
    Train(TrainArgs),
    /// Protect a directory of images with a trained checkpoint.
    Protect(ProtectArgs),
    /// Metrics over aligned clean/protected corpora.
    #[command(subcommand)]
    Eval(EvalCmd),
    /// Write the built-in checker target and its derived mask.
    MakeTarget(MakeTargetArgs),
    /// Pretrain the surrogate encoder by image reconstruction.
    PretrainSurrogate(PretrainArgs),
    /// Re-execute a previous run from its manifest.
    Replay(ReplayArgs),
}

#[derive(Subcommand)]
enum EvalCmd {
    /// PSNR / SSIM / max and L2 perturbation per pair.
    Fidelity(EvalFidelityArgs),
    /// Latent-shift ratios under none / jpeg50 / blur5 preprocessing.
    Robustness(EvalRobustnessArgs),
    /// Per-pair latent-shift ratio toward the target.
    LatentShift(EvalLatentShiftArgs),
    /// Frequency and subband maps of each perturbation.
    Spectrum(EvalSpectrumArgs),
}

#[derive(Args)]
struct ReplayArgs {
    /// Manifest written by a previous run.
    #[arg(long)]
    manifest: PathBuf,
    /// Redirect outputs to a fresh directory (defaults to the recorded one).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn from_value<T: serde::de::DeserializeOwned>(v: serde_json::Value) -> Result<T> {
    serde_json::from_value(v).map_err(|e| Error::Input(format!("manifest args: {e}")))
}

fn run_replay(args: &ReplayArgs, threads: usize) -> Result<()> {
    let m = manifest::read_manifest(&args.manifest)?;
    let mut stored = m.args.clone();
    if let Some(out) = &args.out {
        let slot = stored
            .as_object_mut()
            .and_then(|o| o.get_mut("out"))
            .ok_or_else(|| Error::Input("manifest args lack an output directory".into()))?;
        *slot = serde_json::Value::String(out.display().to_string());
    }
    match m.command.as_str() {
        "train" => run_train(&from_value(stored)?, threads),
        "protect" => run_protect(&from_value(stored)?, threads),
        "eval-fidelity" => run_eval_fidelity(&from_value(stored)?, threads),
        "eval-robustness" => run_eval_robustness(&from_value(stored)?, threads),
        "eval-latent-shift" => run_eval_latent_shift(&from_value(stored)?, threads),
        "eval-spectrum" => run_eval_spectrum(&from_value(stored)?, threads),
        "make-target" => run_make_target(&from_value(stored)?, threads),
        "pretrain-surrogate" => run_pretrain(&from_value(stored)?, threads),
        other => Err(Error::Input(format!("manifest names unknown command \"{other}\""))),
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let threads = cli.threads;
    match cli.cmd {
        Cmd::Train(args) => run_train(&resolve_train(&args)?, threads),
        Cmd::Protect(args) => run_protect(&args, threads),
        Cmd::Eval(EvalCmd::Fidelity(args)) => run_eval_fidelity(&args, threads),
        Cmd::Eval(EvalCmd::Robustness(args)) => run_eval_robustness(&args, threads),
        Cmd::Eval(EvalCmd::LatentShift(args)) => run_eval_latent_shift(&args, threads),
        Cmd::Eval(EvalCmd::Spectrum(args)) => run_eval_spectrum(&args, threads),
        Cmd::MakeTarget(args) => run_make_target(&args, threads),
        Cmd::PretrainSurrogate(args) => run_pretrain(&resolve_pretrain(&args)?, threads),
        Cmd::Replay(args) => run_replay(&args, threads),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = dispatch(cli) {
        eprintln!("error: {e}");
        std::process::exit(if e.is_usage() { 2 } else { 1 });
    }
}
