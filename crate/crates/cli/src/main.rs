use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    ExitCode::from(chernoff_cli::run(chernoff_cli::Cli::parse()))
}
