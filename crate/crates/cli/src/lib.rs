//! Headless entry points for every stage of the relay design pipeline.
//!
//! Every command is a pure function of its flags and seed: artifacts are
//! written in a fixed order with fixed formatting, so two runs with the
//! same arguments produce identical files.

pub mod args;
mod commands;
mod output;
mod plots;

use std::ffi::OsString;
use std::fmt;
use std::process::ExitCode;

use clap::Parser;

pub use args::Cli;
pub use output::Output;

/// A declaration that no design meets the requirements. Exits with code 2.
#[derive(Debug)]
pub struct Infeasibility(pub String);

impl fmt::Display for Infeasibility {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "infeasible: {}", self.0)
    }
}

impl std::error::Error for Infeasibility {}

pub const EXIT_INVALID: u8 = 1;
pub const EXIT_INFEASIBLE: u8 = 2;

/// Exit code for an error returned by [`run`].
pub fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<Infeasibility>().is_some() {
        EXIT_INFEASIBLE
    } else {
        EXIT_INVALID
    }
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> anyhow::Result<()> {
    let out = Output::new(output::resolve_dir(&cli.out));
    commands::dispatch(cli.command, &out)
}

/// Parses `argv`, runs it and maps the outcome to a process exit code.
/// Usage errors exit with 1, so 2 stays reserved for infeasibility.
pub fn main_with<I, T>(argv: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_INVALID } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
