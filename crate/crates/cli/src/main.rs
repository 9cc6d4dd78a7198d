use std::process::ExitCode;

use clap::Parser;
use deid_cli::{execute, parse_failure, Cli};

fn main() -> ExitCode {
    let code = match Cli::try_parse() {
        Ok(cli) => {
            let level = match cli.verbose {
                0 => "warn",
                1 => "info",
                _ => "debug",
            };
            env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
            execute(&cli, &|k| std::env::var(k).ok())
        }
        Err(e) => parse_failure(e),
    };
    ExitCode::from(code as u8)
}
