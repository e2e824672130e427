//! Command-line front end: training, placement sweeps, gradient checks and
//! analysis reports.

pub mod analyze;
pub mod args;
pub mod gradcheck;
pub mod sweep;
pub mod train;

use std::process::ExitCode;

use thiserror::Error;

pub use args::{Cli, Command};

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags or an inconsistent configuration.
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Runtime(#[from] gnpp::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    /// A verification command found a failure.
    #[error("verification failed: {0}")]
    Verification(String),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    /// 1 usage/config, 2 runtime, 3 verification failure.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) | CliError::Io(_) => 2,
            CliError::Verification(_) => 3,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Errors raised while turning flags into a configuration.
pub(crate) fn cfg_err(e: gnpp::Error) -> CliError {
    CliError::Config(e.to_string())
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train(a) => train::cmd_train(&a).map(|_| ()),
        Command::Sweep(a) => sweep::cmd_sweep(&a).map(|_| ()),
        Command::Gradcheck(a) => gradcheck::cmd_gradcheck(&a),
        Command::Analyze(a) => analyze::cmd_analyze(&a),
    }
}

/// Parses `std::env::args`, runs, and maps the outcome to an exit code.
pub fn main_with_args<I, S>(argv: I) -> ExitCode
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    use clap::Parser;
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
