use std::io::Write;

use clap::Parser;
use refocc::{run_command, Cli};

fn main() {
    let cli = Cli::parse();
    let code = match run_command(&cli.command) {
        Ok(report) => {
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            if report.written_to.is_none() {
                let mut out = std::io::stdout().lock();
                let _ = out.write_all(report.csv.as_bytes());
            }
            report.exit_code
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    std::process::exit(code);
}

