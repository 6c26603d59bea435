use std::process::ExitCode;

use clap::Parser;
use milc_cli::{init_logging, run, Cli};

fn main() -> ExitCode {
    init_logging();
    match run(Cli::parse()) {
        Ok(out) => {
            println!("{}", out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("milc: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
