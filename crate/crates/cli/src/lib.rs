//! The `vizaudit` command line: argument types, run directories and the
//! command bodies.

pub mod args;
pub mod commands;
pub mod error;
pub mod run;

use std::path::PathBuf;

use args::Cli;
use error::CliError;
use run::{RunConfig, RunOutcome};

/// Default output root when neither `--out` nor `VIZAUDIT_OUT` is given.
pub const DEFAULT_ROOT: &str = "runs";

/// Resolves the command (from flags or a replayed config) and executes it.
pub fn run_cli(cli: Cli) -> Result<RunOutcome, CliError> {
    let cfg = match (cli.command, cli.config) {
        (Some(_), Some(_)) => return Err(CliError::Usage("--config replaces the command; give one or the other".into())),
        (Some(command), None) => RunConfig::new(command),
        (None, Some(path)) => RunConfig::load(&path)?,
        (None, None) => return Err(CliError::Usage("no command given; see --help".into())),
    };
    let root = cli.out.unwrap_or_else(|| PathBuf::from(DEFAULT_ROOT));
    run::execute(&cfg, &root, cli.force, |dir| commands::run(&cfg.command, dir))
}
