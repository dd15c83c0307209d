use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(sadd_cli::run(std::env::args_os()))
}
