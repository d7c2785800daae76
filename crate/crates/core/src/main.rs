use std::process::ExitCode;

fn main() -> ExitCode {
    axiseg::cli::run(std::env::args_os())
}
