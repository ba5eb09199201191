use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use rawhdr_cli::{error_line, parse_threads, run, Cli, THREADS_ENV};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("error[usage]: {first}");
            return ExitCode::from(2);
        }
    };
    match parse_threads(std::env::var(THREADS_ENV).ok().as_deref()) {
        Ok(Some(n)) => {
            if !rawhdr::par::init_global_threads(n) {
                log::debug!("thread cap {n} not applied");
            }
        }
        Ok(None) => {}
        Err(e) => {
            eprintln!("{}", error_line(&e));
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", error_line(&e));
            ExitCode::FAILURE
        }
    }
}
