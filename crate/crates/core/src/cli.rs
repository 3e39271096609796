//! Argument parsing and exit codes for the `hgn` binary.

use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands;
use crate::config::RunConfig;
use crate::error::{HgnError, Result};

pub const EXIT_VALIDATION: u8 = 1;
pub const EXIT_INTERNAL: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "hgn", version, about = "Hero-Gang sequence labeling")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and save the best-dev checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override `train.train_on_dev`.
        #[arg(long)]
        train_on_dev: bool,
    },
    /// Score a checkpoint on a labelled CoNLL file.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Frozen-Hero embeddings for `--data`.
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// Metrics JSON destination; defaults to `<checkpoint>.metrics.json`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tag a token file and print two-column CoNLL.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of every cell kind and fusion mode.
    Gradcheck {
        /// Also write the report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the no-Gang baseline and each sweep variant.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        sweep: PathBuf,
    },
    /// Write a synthetic local-cue corpus.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 13)]
        seed: u64,
        #[arg(long, default_value_t = 2000)]
        sentences: usize,
        #[arg(long, default_value_t = 5)]
        cue_width: usize,
    },
}

fn write(path: &std::path::Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| HgnError::io(path, e))
}

fn print(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes());
}

/// Runs one parsed command. `Ok(false)` means the command ran but reported failure.
pub fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train { config, train_on_dev } => {
            let mut cfg = RunConfig::load(&config)?;
            cfg.train.train_on_dev |= train_on_dev;
            let rec = commands::cmd_train(&cfg)?;
            print(&serde_json::to_string_pretty(&rec)?);
            print("\n");
        }
        Command::Eval {
            checkpoint,
            data,
            embeddings,
            out,
        } => {
            let out = out.unwrap_or_else(|| commands::default_metrics_path(&checkpoint));
            let m = commands::cmd_eval(&checkpoint, &data, embeddings.as_deref(), Some(&out))?;
            print(&m.table());
        }
        Command::Predict {
            checkpoint,
            input,
            embeddings,
            out,
        } => {
            let text = commands::cmd_predict(&checkpoint, &input, embeddings.as_deref())?;
            match out {
                Some(p) => write(&p, &text)?,
                None => print(&text),
            }
        }
        Command::Gradcheck { out } => {
            let report = commands::cmd_gradcheck()?;
            print(&report.table());
            if let Some(p) = out {
                write(&p, &(serde_json::to_string_pretty(&report)? + "\n"))?;
            }
            return Ok(report.passed);
        }
        Command::Ablate { config, sweep } => {
            let cfg = RunConfig::load(&config)?;
            let sweep = commands::Sweep::load(&sweep)?;
            print(&commands::cmd_ablate(&cfg, &sweep)?.table());
        }
        Command::GenData {
            out,
            seed,
            sentences,
            cue_width,
        } => {
            let m = commands::cmd_gen_data(&out, seed, sentences, cue_width)?;
            print(&(serde_json::to_string_pretty(&m)? + "\n"));
        }
    }
    Ok(true)
}

/// Process exit status for an outcome: 0 success, 1 validation failure,
/// 2 internal error (including a command that ran and reported failure).
pub fn exit_status(outcome: &Result<bool>) -> u8 {
    match outcome {
        Ok(true) => 0,
        Ok(false) => EXIT_INTERNAL,
        Err(e) if e.is_validation() => EXIT_VALIDATION,
        Err(_) => EXIT_INTERNAL,
    }
}

/// Entry point used by the binary: logging from `HGN_LOG`, parse, run, report.
pub fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HGN_LOG", "error"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_VALIDATION)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let outcome = run(cli);
    if let Err(e) = &outcome {
        eprintln!("error: {e}");
    }
    ExitCode::from(exit_status(&outcome))
}
