//! `hicle`: generate data, train, embed, evaluate and verify gradients.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hicle_core::losses::LossKind;
use hicle_core::Error;

#[derive(Debug, Parser)]
#[command(
    name = "hicle",
    version,
    about = "Hierarchical multi-label contrastive learning"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalOpts {
    /// JSON run configuration (flat keys, unknown keys rejected).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configuration's seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory, or report file for `eval`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads. Every computation is single-threaded and bit-stable,
    /// so values above one change nothing.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    pub threads: u32,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Writes a synthetic hierarchical dataset.
    GenData,
    /// Trains an encoder on the training split of a dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_parser = parse_loss)]
        loss: Option<LossKind>,
    },
    /// Writes encoder and projection features for every row of a dataset.
    Embed {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Evaluates exported embeddings.
    Eval {
        kind: EvalKind,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
    },
    /// Compares analytic gradients with central finite differences.
    Gradcheck {
        /// Perturbs the analytic gradients; the check must then fail.
        #[arg(long)]
        corrupt: bool,
        #[arg(long, default_value_t = 20)]
        cases: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalKind {
    Retrieval,
    Nmi,
    Violations,
    LinearProbe,
}

fn parse_loss(s: &str) -> Result<LossKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_IO: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;

/// Exit code for a failed command.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) => EXIT_USAGE,
        Error::Io { .. }
        | Error::Format { .. }
        | Error::Csv(_)
        | Error::Json(_)
        | Error::Structural(_) => EXIT_IO,
        _ => EXIT_NUMERIC,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HICLE_LOG", "warn"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
