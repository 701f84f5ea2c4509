use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(gaituda::pipeline::cli::cli(std::env::args_os()) as u8)
}
