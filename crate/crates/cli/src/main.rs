use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(clueset_cli::run(std::env::args_os()))
}
