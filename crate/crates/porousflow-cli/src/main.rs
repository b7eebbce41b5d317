use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(porousflow_cli::cli(std::env::args()))
}
