//! `hierflow` command-line front end.

mod cli;
mod commands;
mod config;
mod run_info;

use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let args = match cli::Cli::try_parse_from(&argv) {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    env_logger::Builder::new()
        .parse_filters(&args.log_level)
        .parse_default_env()
        .format_timestamp(None)
        .init();
    match commands::run(&args, &argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 1 for user errors, 2 for numeric failures.
fn exit_code(e: &hierflow::Error) -> u8 {
    if e.is_numeric() {
        2
    } else {
        1
    }
}
