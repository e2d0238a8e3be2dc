use std::process::ExitCode;

use clap::Parser;
use fastridge_cli::{run, Cli};

fn main() -> ExitCode {
    // clap exits with status 2 on bad flags and 0 for --help/--version
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
