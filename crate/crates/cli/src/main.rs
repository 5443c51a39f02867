use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use vizaudit_cli::args::Cli;
use vizaudit_cli::run::Status;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or_default();
            eprintln!("error[E_USAGE]: {}", first.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    match vizaudit_cli::run_cli(cli) {
        Ok(outcome) => {
            let note = if outcome.cached { " (cached)" } else { "" };
            println!("run: {}{note}", outcome.dir.display());
            match outcome.status {
                Status::Passed => ExitCode::SUCCESS,
                Status::Failed => {
                    eprintln!(
                        "verification failed: {}",
                        outcome.failure.as_deref().unwrap_or("see the run directory")
                    );
                    ExitCode::from(1)
                }
            }
        }
        Err(e) => {
            eprintln!("{}", e.render());
            ExitCode::from(2)
        }
    }
}
