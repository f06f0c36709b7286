use std::process::ExitCode;

use clap::Parser;
use late_cli::config::{Flags, Settings};

/// Estimate local average treatment effects from a CSV or a simulated sample.
#[derive(Debug, Parser)]
#[command(name = "late", version)]
struct Cli {
    #[command(flatten)]
    flags: Flags,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = Settings::resolve(&cli.flags).and_then(|s| late_cli::run(&s));
    match result {
        Ok(report) => {
            for (name, err) in report.condition_failures() {
                eprintln!("{name}: {err}");
            }
            ExitCode::from(report.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
