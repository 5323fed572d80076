use std::process::ExitCode;

fn main() -> ExitCode {
    deepin::cli::main_with_args(std::env::args_os())
}
