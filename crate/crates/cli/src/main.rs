use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use gfscma::config::Variant;
use gfscma::evalkit::SweepAxis;
use gfscma_cli::{
    cmd_dump, cmd_pretrain, cmd_sweep, cmd_train, resolve_config, CliError, DumpTarget, SweepOptions, TrainOptions,
};

#[derive(Parser)]
#[command(
    name = "gfscma",
    version,
    about = "Grant-free SCMA active user detection: train, sweep, dump"
)]
struct Cli {
    /// Config file, or `builtin:default`, `builtin:high-activity`, `builtin:scaled`.
    #[arg(long, global = true, default_value = "builtin:default")]
    config: String,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for sweeps. Results do not depend on it.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pre-train the UAEN alone.
    Pretrain {
        /// Output directory.
        #[arg(long, default_value = "runs/pretrain")]
        out: PathBuf,
    },
    /// End-to-end training for the configured variant.
    Train {
        #[arg(long, default_value = "runs/train")]
        out: PathBuf,
        /// Pre-trained UAEN checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Resume from a period checkpoint.
        #[arg(long, conflicts_with = "checkpoint")]
        resume: Option<PathBuf>,
        /// Overrides the config's variant.
        #[arg(long)]
        variant: Option<String>,
    },
    /// Evaluate checkpoints along one axis and write a results CSV.
    Sweep {
        /// `snr`, `data_length` or `scheme`.
        #[arg(long, default_value = "snr")]
        axis: String,
        /// Trained checkpoints (repeatable).
        #[arg(long = "checkpoint")]
        checkpoints: Vec<PathBuf>,
        /// Comma-separated axis values.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
        /// SNR for the data_length and scheme axes.
        #[arg(long, default_value_t = 15.0)]
        snr: f64,
        /// Frames per point (defaults to the config's test sample count).
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long, default_value = "runs/sweep.csv")]
        out: PathBuf,
    },
    /// Print `codebook`, `preambles` or `model-summary`.
    Dump {
        what: String,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Write to a file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = resolve_config(&cli.config, cli.seed)?;
    match cli.command {
        Command::Pretrain { out } => {
            let r = cmd_pretrain(&cfg, &out)?;
            println!("checkpoint {} digest {}", r.checkpoint.display(), r.checkpoint_digest);
        }
        Command::Train {
            out,
            checkpoint,
            resume,
            variant,
        } => {
            if let Some(v) = variant {
                cfg.variant = Variant::parse(&v).ok_or_else(|| CliError::Usage(format!("unknown variant `{v}`")))?;
            }
            let r = cmd_train(
                &cfg,
                &out,
                &TrainOptions {
                    pretrained: checkpoint,
                    resume,
                },
            )?;
            for w in &r.warnings {
                eprintln!("warning: {w}");
            }
            println!("checkpoint {} digest {}", r.checkpoint.display(), r.checkpoint_digest);
        }
        Command::Sweep {
            axis,
            checkpoints,
            values,
            snr,
            frames,
            out,
        } => {
            let axis = SweepAxis::parse(&axis).ok_or_else(|| CliError::Usage(format!("unknown axis `{axis}`")))?;
            let reports = cmd_sweep(
                &cfg,
                &checkpoints,
                &out,
                &SweepOptions {
                    axis,
                    values,
                    snr_db: snr,
                    frames,
                    workers: cli.workers,
                },
            )?;
            println!("{} points written to {}", reports.len(), out.display());
        }
        Command::Dump { what, checkpoint, out } => {
            let target =
                DumpTarget::parse(&what).ok_or_else(|| CliError::Usage(format!("unknown dump target `{what}`")))?;
            let text = cmd_dump(&cfg, target, checkpoint.as_deref())?;
            match out {
                Some(path) => {
                    std::fs::write(&path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?
                }
                None => print!("{text}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::FAILURE
        }
    }
}
