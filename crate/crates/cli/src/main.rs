use std::process::ExitCode;

use clap::Parser;
use eqk::{Cli, EXIT_INPUT, EXIT_OK};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("EQK_LOG", "error"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_INPUT } else { EXIT_OK });
        }
    };
    ExitCode::from(eqk::run(cli))
}
