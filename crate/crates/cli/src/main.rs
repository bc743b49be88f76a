//! `capplan`: generate synthetic procedure-planning datasets, train the
//! caption-context generator, evaluate plan distributions, decode single
//! windows, and run the self-verification suites.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;

/// Typed failures mapped onto documented exit codes.
#[derive(Debug)]
pub enum CliError {
    /// exit 1: a verification check failed
    Verification(String),
    /// exit 2: configuration problem
    Config(String),
    /// exit 3: I/O problem
    Io(String),
    /// exit 4: numerical failure (non-finite loss, degenerate inputs)
    Numeric(String),
    /// exit 5: shape mismatch between checkpoint, dataset, and config
    Shape(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Verification(_) => 1,
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Numeric(_) => 4,
            CliError::Shape(_) => 5,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Verification(m)
            | CliError::Config(m)
            | CliError::Io(m)
            | CliError::Numeric(m)
            | CliError::Shape(m) => m,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Verification(_) => "verification failure",
            CliError::Config(_) => "config error",
            CliError::Io(_) => "i/o error",
            CliError::Numeric(_) => "numeric error",
            CliError::Shape(_) => "shape error",
        }
    }
}

#[derive(Parser)]
#[command(
    name = "capplan",
    about = "Caption-context procedure planning laboratory",
    version
)]
struct Cli {
    /// Flat key=value config file (see `dump-config` for all keys)
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the global seed
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override any config key (repeatable), e.g. --set train.epochs=10
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,

    /// Output path (meaning depends on the subcommand)
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Plan horizon (repeatable); overrides data.horizons and eval.horizons
    #[arg(long, global = true)]
    horizon: Vec<usize>,

    /// Samples drawn per {start, goal} observation at evaluation
    #[arg(long, global = true)]
    samples: Option<usize>,

    /// Disable the context path and caption supervision
    #[arg(long = "ablate-context", global = true)]
    ablate_context: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (writes to --out or paths.dataset)
    GenData,
    /// Train the generator; writes the best-on-validation checkpoint
    Train {
        /// Continue from a checkpoint, starting after its stored epoch
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the test split, one report per horizon
    Eval,
    /// Decode a single test window and print its plan
    Decode {
        /// Index into the test split
        #[arg(long, default_value_t = 0)]
        index: usize,
    },
    /// Run the self-verification suites (oracles, gradients, invariants)
    Verify,
    /// Print the effective configuration after all overrides
    DumpConfig,
}

fn build_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut config = RunConfig::default();
    if let Some(path) = &cli.config {
        config.apply_file(path).map_err(CliError::Config)?;
    }
    for assignment in &cli.set {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("--set expects KEY=VALUE, got {assignment}")))?;
        config.set(key.trim(), value).map_err(CliError::Config)?;
    }
    commands::apply_flags(
        &mut config,
        cli.seed,
        &cli.horizon,
        cli.samples,
        cli.ablate_context,
    );
    config.validate().map_err(CliError::Config)?;
    Ok(config)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config = build_config(&cli)?;
    match &cli.command {
        Command::GenData => commands::cmd_gen_data(&config, cli.out.as_deref()),
        Command::Train { resume } => {
            commands::cmd_train(&config, cli.out.as_deref(), resume.as_deref())
        }
        Command::Eval => commands::cmd_eval(&config, cli.out.as_deref()),
        Command::Decode { index } => commands::cmd_decode(&config, *index, cli.out.as_deref()),
        Command::Verify => commands::cmd_verify(),
        Command::DumpConfig => {
            print!("{}", config.render());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("capplan: {}: {}", err.kind(), err.message());
            ExitCode::from(err.exit_code())
        }
    }
}
