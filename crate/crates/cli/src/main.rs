use std::process::ExitCode;

use clap::Parser;
use rfeh_cli::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(message) => {
            println!("{message}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("rfeh: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
