//! `cplm`: fit, reconstruct, compare and benchmark CP models.
//!
//! Exit statuses: 0 success, 1 usage, 2 unreadable or invalid input,
//! 3 output failure, 4 solver divergence.

mod args;
mod commands;
mod error;
mod io;
mod settings;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use error::CliError;

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Decompose(a) => commands::decompose(&a),
        Command::Reconstruct(a) => commands::reconstruct(&a),
        Command::Compare(a) => commands::compare(&a),
        Command::Bench(a) => commands::bench(&a),
        Command::Info(a) => commands::info(&a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
