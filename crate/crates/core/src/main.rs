use std::process::ExitCode;

fn main() -> ExitCode {
    mbae_core::cli::main_with_args(std::env::args_os())
}
