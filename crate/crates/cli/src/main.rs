mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use maskpool::data::Task;

#[derive(Parser)]
#[command(name = "maskpool", version, about = "Masked global pooling networks for audio scenes and tags")]
struct Cli {
    /// Cap on worker threads (feature extraction and evaluation).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Reproducible output: ordered reductions and zeroed wall times in logs.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct ConfigArgs {
    /// Run configuration (JSON). Missing fields take their defaults.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Overrides the task named in the config.
    #[arg(long, value_enum)]
    task: Option<TaskArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Scene,
    Tagging,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Scene => Task::Scene,
            TaskArg::Tagging => Task::Tagging,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Preset {
    /// Three tone classes (single-label).
    Tones,
    /// Four tone tags (multi-label).
    Tags,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Train,
    Val,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with manifest, classes and run config.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "tones")]
        preset: Preset,
        #[arg(long)]
        seed: Option<u64>,
        /// Clips per class (tones) or total clips (tags).
        #[arg(long)]
        clips: Option<usize>,
    },
    /// Compute spectrogram caches and per-fold standardizers.
    Features {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Fit the standardizer of this fold only.
        #[arg(long)]
        fold: Option<usize>,
    },
    /// Train on every fold but one and validate on the held-out fold.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value_t = 1)]
        fold: usize,
        /// Build the model, print its layer table and exit.
        #[arg(long)]
        dry_run: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        max_epochs: Option<usize>,
    },
    /// Evaluate checkpoints and write CSV/JSON reports.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value_t = 1, conflicts_with = "all_folds")]
        fold: usize,
        /// Evaluate every fold and add a pooled report.
        #[arg(long)]
        all_folds: bool,
        #[arg(long, value_enum, default_value = "val")]
        split: Split,
        /// Checkpoint to use instead of the fold's default.
        #[arg(long, conflicts_with = "all_folds")]
        checkpoint: Option<PathBuf>,
        /// Compare the batched masked forward against the unbatched reference.
        #[arg(long)]
        verify: bool,
    },
    /// Print class probabilities for one WAV file as JSON.
    Predict {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value_t = 1)]
        fold: usize,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        wav: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Synth {
            out,
            preset,
            seed,
            clips,
        } => commands::synth(&out, preset, seed, clips),
        Command::Features { cfg, fold } => commands::features(&cfg, fold),
        Command::Train {
            cfg,
            fold,
            dry_run,
            seed,
            max_epochs,
        } => commands::train(&cfg, fold, dry_run, seed, max_epochs, cli.deterministic),
        Command::Eval {
            cfg,
            fold,
            all_folds,
            split,
            checkpoint,
            verify,
        } => commands::eval(&cfg, (!all_folds).then_some(fold), split, checkpoint, verify),
        Command::Predict {
            cfg,
            fold,
            checkpoint,
            wav,
        } => commands::predict(&cfg, fold, checkpoint, &wav),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
