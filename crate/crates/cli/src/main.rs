mod args;
mod commands;
mod config;
mod error;
mod manifest;

use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches};

use args::Cli;
use error::{config_err, CliError, CliResult};

fn thread_count(flag: Option<usize>) -> CliResult<Option<usize>> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var("HDRTV_THREADS") {
            Ok(v) if !v.trim().is_empty() => Some(
                v.trim()
                    .parse::<usize>()
                    .map_err(|_| config_err(format!("HDRTV_THREADS: `{v}` is not a thread count")))?,
            ),
            _ => None,
        },
    };
    if n == Some(0) {
        return Err(config_err("thread count must be at least 1"));
    }
    Ok(n)
}

fn run() -> CliResult<()> {
    let root = Cli::command();
    let argv = config::merged_args(std::env::args_os().collect(), &root)?;
    let matches = match root.try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) => match e.kind() {
            clap::error::ErrorKind::DisplayHelp
            | clap::error::ErrorKind::DisplayVersion
            | clap::error::ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => e.exit(),
            _ => {
                let text = e.to_string();
                let first = text.lines().next().unwrap_or("invalid arguments");
                return Err(config_err(first.trim_start_matches("error: ").to_string()));
            }
        },
    };
    let cli = Cli::from_arg_matches(&matches).map_err(|e| config_err(e.to_string()))?;
    if let Some(n) = thread_count(cli.threads)? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    commands::dispatch(&cli)
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
