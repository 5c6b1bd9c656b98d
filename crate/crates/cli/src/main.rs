mod args;
mod commands;
mod error;
mod provenance;

use std::process::ExitCode;

use clap::Parser;

use args::Cli;
use error::{CliError, EXIT_CONFIG};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    if let Some(n) = cli.threads {
        let built = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
        if n == 0 || built.is_err() {
            eprintln!("error: --threads must be a positive integer");
            return ExitCode::from(EXIT_CONFIG);
        }
    }

    match commands::run(&cli.command, cli.threads) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(&e),
    }
}

fn report(e: &CliError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code())
}
