use std::process::ExitCode;

use clap::Parser;
use supinf::cli::{self, Cli};

fn main() -> ExitCode {
    ExitCode::from(cli::run(Cli::parse()))
}
