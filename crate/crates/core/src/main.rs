use std::process::ExitCode;

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().collect();
    ExitCode::from(ffomaml::harness::cli::run_cli(&args) as u8)
}
