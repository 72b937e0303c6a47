use std::process::ExitCode;

use bigmvp_cli::args::{dispatch, Cli, Command};
use clap::Parser;

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Fit(_) => "fit",
        Command::FitHier(_) => "fit-hier",
        Command::Simulate(_) => "simulate",
        Command::Predict(_) => "predict",
        Command::Verify(_) => "verify",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let name = command_name(&cli.command);
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // failures are reported as one JSON object on stderr
            let report = serde_json::json!({
                "error": {
                    "command": name,
                    "message": format!("{e:#}"),
                }
            });
            eprintln!("{report}");
            ExitCode::FAILURE
        }
    }
}
