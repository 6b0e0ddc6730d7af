use std::process::ExitCode;

use clap::Parser;
use cprune::cli::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(outcome) => {
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("cprune: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
