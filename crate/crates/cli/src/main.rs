use std::process::ExitCode;

fn main() -> ExitCode {
    arsched_cli::main_with_args(std::env::args_os())
}
