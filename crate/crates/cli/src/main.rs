use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::Parser;
use drpc_core::cli::{run, Cli};

const LOG_ENV: &str = "DRPC_LOG_LEVEL";

fn main() -> ExitCode {
    if let Err(e) = init_logging() {
        eprintln!("error: {e:#}");
        return ExitCode::from(2);
    }
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn init_logging() -> Result<()> {
    let level = match std::env::var(LOG_ENV) {
        Err(_) => log::LevelFilter::Info,
        Ok(v) => match v.as_str() {
            "error" => log::LevelFilter::Error,
            "info" => log::LevelFilter::Info,
            "debug" => log::LevelFilter::Debug,
            other => bail!("{LOG_ENV} must be error, info or debug (got `{other}`)"),
        },
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .init();
    Ok(())
}

