use std::process::ExitCode;

use clap::Parser;

use cauchygain_cli::{commands, Cli, EXIT_ERROR};

fn main() -> ExitCode {
    // usage errors exit with 1 like every other error; 2 means a check failed
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_ERROR) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
