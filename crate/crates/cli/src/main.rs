use std::process::ExitCode;

use clap::Parser;
use swap_cli::args::{run, Cli};
use swap_cli::configure_threads;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| run(&cli));
    match result {
        Ok(outcome) => {
            for line in &outcome.summary {
                println!("{line}");
            }
            if outcome.failures > 0 {
                eprintln!("error: {} run(s) failed; completed rows were written", outcome.failures);
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
