//! The `sadd` command line: reproducible generate, train, eval, hist and
//! sweep-alpha runs over the synthetic audio-visual corpus.

pub mod commands;
pub mod config;
pub mod meta;

use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::RunConfig;

/// Process exit codes.
pub mod exit {
    pub const OK: u8 = 0;
    pub const USAGE: u8 = 1;
    pub const DATA: u8 = 2;
    pub const NUMERIC: u8 = 3;
}

/// A failed command with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: exit::USAGE,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Failure {
            code: exit::DATA,
            message: message.into(),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<sadd::Error> for Failure {
    fn from(e: sadd::Error) -> Self {
        use sadd::Error as E;
        let code = match &e {
            E::NonFiniteLoss { .. } => exit::NUMERIC,
            E::Config(_) | E::InvalidArgument { .. } => exit::USAGE,
            _ => exit::DATA,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "sadd", version, about = "Statistics-aware audio-visual deepfake detection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic train/test corpus.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Train on a corpus and save the best checkpoint and score normalizer.
    Train {
        #[command(flatten)]
        common: Common,
        /// Corpus directory written by `generate`.
        #[arg(long)]
        data: PathBuf,
        /// Shortcut for `--set train.variant=...` (stats, kl, none).
        #[arg(long)]
        variant: Option<String>,
        /// Shortcut for `--set train.alpha=...`.
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Score a split with a trained run and report AUC.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Output directory of `train`.
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Export per-sample feature histograms.
    Hist {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Sample ids as `<video_id>#<window>`; defaults to the first window
        /// of the first three real and three fake videos.
        #[arg(long = "sample")]
        samples: Vec<String>,
    },
    /// Train and evaluate once per alpha and summarize the test AUCs.
    SweepAlpha {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated alphas; defaults to `sweep.alphas`.
        #[arg(long, value_delimiter = ',')]
        alphas: Option<Vec<f64>>,
        #[arg(long)]
        variant: Option<String>,
    },
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML config file, or the run.meta of an earlier run.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dotted override such as `train.epochs=5`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Replace outputs of an earlier run in `--out`.
    #[arg(long)]
    pub force: bool,
    /// Worker threads for data generation and scoring.
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

impl Common {
    pub fn resolve(&self, extra: &[String]) -> Result<RunConfig, Failure> {
        let mut overrides = self.overrides.clone();
        overrides.extend_from_slice(extra);
        if let Some(seed) = self.seed {
            overrides.push(format!("seed={seed}"));
        }
        RunConfig::load(self.config.as_deref(), &overrides)
    }
}

/// Parses the arguments, runs the command and returns the exit code.
pub fn run(args: impl IntoIterator<Item = std::ffi::OsString>) -> u8 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { exit::USAGE } else { exit::OK };
        }
    };
    match commands::dispatch(cli.command) {
        Ok(()) => exit::OK,
        Err(f) => {
            eprintln!("error: {f}");
            f.code
        }
    }
}
