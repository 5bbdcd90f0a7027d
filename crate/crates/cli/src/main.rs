//! `greenrisk` command-line interface.
//!
//! Exit codes: 0 on success, 2 for user or input errors, 3 for internal faults.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use greenrisk::labeling::Scheme;

use crate::config::PipelineConfig;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: 2,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<greenrisk::Error> for CliError {
    fn from(e: greenrisk::Error) -> Self {
        CliError {
            code: if e.is_user_error() { 2 } else { 3 },
            message: e.to_string(),
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "greenrisk",
    version,
    about = "Greenwashing-risk labeling and evaluation for sustainability reports"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalArgs {
    /// Pipeline configuration file (INI-style key = value with [sections])
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Base seed: sets the split seed and the first classifier seed
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    /// Labeling scheme
    #[arg(long, global = true, value_enum)]
    scheme: Option<SchemeArg>,

    /// Override any config value, e.g. --set corpus.max_chars=1500
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SchemeArg {
    Eq1,
    Eq2,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Chunk, score and label the training reports, then write train/validation splits
    Label,
    /// Fit risk-equation weights to expert-annotated exemplars by least squares
    Fit {
        /// Exemplars JSONL (overrides paths.exemplars)
        #[arg(long)]
        exemplars: Option<PathBuf>,
    },
    /// Train one classifier per seed and select the final run
    Train,
    /// Evaluate the selected model on test reports with majority voting
    Evaluate,
    /// Relative emissions, outlier flags and the joined label report
    Emissions,
    /// Print hedging phrases found in each paragraph of the given files
    ScanHedging {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut config = PipelineConfig::load(cli.global.config.as_deref(), &cli.global.overrides)?;
    if let Some(seed) = cli.global.seed {
        config.apply_seed(seed);
    }
    if let Some(out) = cli.global.out_dir {
        config.paths.out_dir = out;
    }
    if let Some(s) = cli.global.scheme {
        config.scheme = match s {
            SchemeArg::Eq1 => Scheme::Eq1,
            SchemeArg::Eq2 => Scheme::Eq2,
        };
    }
    match cli.command {
        Command::Label => commands::label(&config),
        Command::Fit { exemplars } => commands::fit(&config, exemplars),
        Command::Train => commands::train(&config),
        Command::Evaluate => commands::evaluate(&config),
        Command::Emissions => commands::emissions(&config),
        Command::ScanHedging { files } => commands::scan_hedging(&config, &files),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
