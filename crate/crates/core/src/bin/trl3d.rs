use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use trl3d::commands::run_command;
use trl3d::config::RunConfig;

#[derive(Parser)]
#[command(
    name = "trl3d",
    about = "Viewpoint-agnostic token representations: training and evaluation on synthetic multi-view data",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct CommonArgs {
    /// Path to a key=value config file.
    #[arg(long)]
    config: PathBuf,
    /// Run directory for all outputs (default: runs/<command>-<timestamp>).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (classification or alignment).
    GenData(CommonArgs),
    /// Train a classifier and report train/test/held-out-viewpoint accuracy.
    TrainClassify(CommonArgs),
    /// Train frame embeddings with the time-contrastive loss.
    TrainAlign(CommonArgs),
    /// Alignment metrics on the Seen and Unseen camera splits.
    EvalAlign(CommonArgs),
    /// Depth correlation vs ground truth, with untrained and random baselines.
    EvalDepth(CommonArgs),
    /// Camera disparity over a moving-camera sequence at given checkpoints.
    EvalCamera(CommonArgs),
    /// Finite-difference gradient verification of every parameter group.
    Gradcheck(CommonArgs),
    /// Ablation sweep: baseline, MLP control, trl3d, direct-xyz, concat.
    Ablate(CommonArgs),
}

impl Command {
    fn unpack(self) -> (&'static str, CommonArgs) {
        match self {
            Command::GenData(a) => ("gen-data", a),
            Command::TrainClassify(a) => ("train-classify", a),
            Command::TrainAlign(a) => ("train-align", a),
            Command::EvalAlign(a) => ("eval-align", a),
            Command::EvalDepth(a) => ("eval-depth", a),
            Command::EvalCamera(a) => ("eval-camera", a),
            Command::Gradcheck(a) => ("gradcheck", a),
            Command::Ablate(a) => ("ablate", a),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, args) = cli.command.unpack();
    let result = (|| -> trl3d::Result<PathBuf> {
        let mut cfg = RunConfig::load(&args.config)?;
        if let Some(seed) = args.seed {
            cfg.set("seed", seed.to_string())?;
        }
        run_command(name, &cfg, args.out)
    })();
    match result {
        Ok(out) => {
            println!("{name}: ok, outputs in {}", out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{name}: {e}");
            ExitCode::FAILURE
        }
    }
}
