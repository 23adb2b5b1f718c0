use std::process::ExitCode;

use clap::Parser;
use dswmpc::cli::{execute, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    ExitCode::from(execute(&cli).code())
}
