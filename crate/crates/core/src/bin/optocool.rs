use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(optocool::cli::main_with(std::env::args_os()))
}
