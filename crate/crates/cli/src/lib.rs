//! The `clueset` command line: argument parsing, config resolution, the
//! subcommands and run manifests.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;

use std::ffi::OsString;

use clap::error::ErrorKind;
use clap::Parser;

use args::Cli;
use error::{CliError, CliResult};

fn execute(cli: &Cli) -> CliResult<manifest::RunManifest> {
    let cfg = config::resolve(cli.config.as_deref(), &cli.overrides()?)?;
    if let Some(n) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Failed(format!("cannot start {n} threads: {e}")))?;
    }
    commands::execute(&cli.command, cfg, &cli.out)
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
        }
    };
    match execute(&cli) {
        Ok(_) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
