mod cli;
mod commands;
mod report;

use std::process::ExitCode;

use clap::Parser;
use clap::error::ErrorKind;
use tracing_subscriber::EnvFilter;

use cli::{Cli, Command};

/// Failures split by exit code: bad invocation or inputs (1) versus a
/// failure while doing the work (2).
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn init_logging(debug_wire: bool) {
    let default = if debug_wire { "warn,wire=info" } else { "warn" };
    let filter = EnvFilter::try_from_env("DIAGENT_LOG").unwrap_or_else(|_| EnvFilter::new(default));
    let _ = tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).try_init();
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    init_logging(cli.debug_wire);

    let result = match &cli.command {
        Command::Run(a) => commands::run(a, &cli),
        Command::Ablate(a) => commands::ablate(a, &cli),
        Command::Analyze(a) => commands::analyze(a, &cli),
        Command::Report(a) => report::report(a, &cli),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("diagent: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("diagent: {e:#}");
            ExitCode::from(2)
        }
    }
}
