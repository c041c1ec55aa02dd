use std::process::ExitCode;

fn main() -> ExitCode {
    graft::cli::main_with_args(std::env::args_os())
}
