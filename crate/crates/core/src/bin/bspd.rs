use std::process::ExitCode;

use bspd::cli::{dispatch, Cli};
use clap::Parser;

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(cli.log_level())
        .parse_env("BSPD_LOG")
        .init();
    match dispatch(&cli) {
        Ok(report) => {
            if !cli.quiet {
                print!("{}", report.text);
                println!("output: {}", report.dir.display());
            }
            if report.success {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
