use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(hedge_service::cli::run(std::env::args_os()))
}
