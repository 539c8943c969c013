//! `shredlab` — sparse-sensor spatio-temporal modeling from the command
//! line: generate synthetic fields, train reconstruction models, sweep the
//! hyperparameter grid, evaluate checkpoints, and extract latent ODEs.
//!
//! Exit codes: 0 on success, 2 for usage/config errors, 3 for numerical
//! failures (diverged training). `SHREDLAB_PRECISION` selects the float
//! width when neither `--precision` nor the config chooses one.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use shredlab::commands::{
    cmd_eval, cmd_extract, cmd_generate, cmd_sweep, cmd_train, SweepOverrides, TrainOverrides,
};

#[derive(Parser)]
#[command(
    name = "shredlab",
    version,
    about = "Train sparse-sensor reconstruction models and extract latent dynamics"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic STF1 field from a JSON spec.
    Generate {
        /// Generator spec (JSON: kind, grid_dims, n_time, ...).
        spec: PathBuf,
        /// Output .stf path.
        out: PathBuf,
        /// Override the spec's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train one model from a JSON job config; writes a run directory.
    Train {
        /// Train job config (JSON).
        config: PathBuf,
        /// Run directory (overrides the config's out_dir).
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Master seed override.
        #[arg(long)]
        seed: Option<u64>,
        /// Learning-rate override.
        #[arg(long)]
        lr: Option<f64>,
        /// Epoch-count override.
        #[arg(long)]
        n_epochs: Option<usize>,
        /// Float width: f32 or f64.
        #[arg(long)]
        precision: Option<String>,
        /// Dataset path override (replaces the config's dataset source).
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Run a hyperparameter sweep; writes runs/aggregate/top-12 CSVs.
    Sweep {
        /// Sweep job config (JSON).
        config: PathBuf,
        /// Sweep directory (overrides the config's out_dir).
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Parallel worker count.
        #[arg(long)]
        jobs: Option<usize>,
        /// Float width: f32 or f64.
        #[arg(long)]
        precision: Option<String>,
    },
    /// Evaluate a checkpoint on a dataset split; prints JSON to stdout.
    Eval {
        /// Checkpoint file (.ckpt).
        #[arg(long)]
        checkpoint: PathBuf,
        /// STF1 dataset to evaluate on.
        #[arg(long)]
        dataset: PathBuf,
        /// Which chronological split: train, val, or test.
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Extract latent ODEs from a SINDy-attention checkpoint.
    Extract {
        /// Checkpoint file (.ckpt).
        checkpoint: PathBuf,
        /// Where to write odes.txt / odes.json (default: beside the checkpoint).
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

/// Restore default SIGPIPE handling so piping into `head` or `less` ends
/// the process quietly instead of panicking on a closed stdout.
#[cfg(unix)]
fn reset_sigpipe() {
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
}

#[cfg(not(unix))]
fn reset_sigpipe() {}

fn main() -> ExitCode {
    reset_sigpipe();
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Generate { spec, out, seed } => cmd_generate(&spec, &out, seed),
        Cmd::Train {
            config,
            out_dir,
            seed,
            lr,
            n_epochs,
            precision,
            dataset,
        } => cmd_train(
            &config,
            &TrainOverrides {
                out_dir,
                seed,
                lr,
                n_epochs,
                precision,
                dataset,
            },
        )
        .map(|_| ()),
        Cmd::Sweep {
            config,
            out_dir,
            jobs,
            precision,
        } => cmd_sweep(
            &config,
            &SweepOverrides {
                out_dir,
                jobs,
                precision,
            },
        )
        .map(|_| ()),
        Cmd::Eval {
            checkpoint,
            dataset,
            split,
        } => cmd_eval(&checkpoint, &dataset, &split).map(|_| ()),
        Cmd::Extract {
            checkpoint,
            out_dir,
        } => cmd_extract(&checkpoint, out_dir.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
