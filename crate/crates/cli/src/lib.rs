//! The `mind` command line: prepare → train → eval → retrieve → inspect → sweep.
//!
//! Exit codes: 0 success, 1 usage or configuration, 2 data, 3 numeric failure.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mind_core::MindError;

#[derive(Debug, Parser)]
#[command(name = "mind", version, about = "Multi-interest retrieval with dynamic routing")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Run configuration (TOML).
    #[arg(short, long)]
    pub config: PathBuf,
    /// Override a config key, e.g. `--set model.routing.sigma=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct UserArgs {
    /// Use this user's full known history.
    #[arg(long, conflicts_with = "behaviors")]
    pub user: Option<String>,
    /// Explicit behavior item ids, oldest first.
    #[arg(long, value_delimiter = ',')]
    pub behaviors: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepKind {
    Sigma,
    P,
    Method,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Filter, split and index a log (or a generated one).
    Prepare {
        #[command(flatten)]
        common: Common,
        /// Interaction log; overrides `data.log`.
        #[arg(long, conflicts_with = "synthetic")]
        input: Option<PathBuf>,
        /// Profile table; overrides `data.profiles`.
        #[arg(long)]
        profiles: Option<PathBuf>,
        /// Generate the log from the `[synthetic]` section.
        #[arg(long)]
        synthetic: bool,
    },
    /// Train, or continue a checkpoint with `--resume`.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        resume: bool,
    },
    /// Hit rates of a checkpoint and the popularity baseline on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Top-N items for one user.
    Retrieve {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        who: UserArgs,
        #[arg(short = 'n', long, default_value_t = 10)]
        top: usize,
        /// Write here instead of stdout.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Coupling table and candidate-similarity histogram for one user.
    Inspect {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        who: UserArgs,
    },
    /// Train and evaluate a grid over `eval.seeds`.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(value_enum)]
        axis: SweepKind,
    },
}

/// Exit code for a failure, from the first recognised cause.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<MindError>() {
            return match e {
                MindError::Config(_) => 1,
                MindError::Numeric(_) => 3,
                _ => 2,
            };
        }
        if cause.downcast_ref::<clap::Error>().is_some() {
            return 1;
        }
    }
    2
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match commands::dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}
