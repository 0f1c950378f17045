mod args;
mod commands;
mod error;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use error::CliError;

fn configure_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var("METAGAM_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| {
            CliError::input(format!(
                "METAGAM_THREADS must be a positive integer, got `{value}`"
            ))
        })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::new(error::EXIT_FAILURE, e.to_string()))
}

fn run(cli: &Cli) -> Result<(), CliError> {
    configure_threads()?;
    match &cli.command {
        Command::Fit(a) => commands::fit(a),
        Command::Strip(a) => commands::strip(a),
        Command::Meta(a) => commands::meta(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Plot(a) => commands::plot(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
