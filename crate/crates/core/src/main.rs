use std::process::ExitCode;

use clap::Parser;
use psu_core::cli::{exit_code, run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = run(&cli);
    match &result {
        Ok(o) => {
            for line in &o.summary {
                println!("{line}");
            }
            println!("artifacts written to {}", o.out_dir.display());
        }
        Err(e) => eprintln!("error: {e}"),
    }
    ExitCode::from(exit_code(&result) as u8)
}
