use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    match asmbt_cli::execute(asmbt_cli::Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
