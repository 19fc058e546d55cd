use std::io;
use std::process::ExitCode;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut stdout = io::stdout().lock();
    let mut stderr = io::stderr();
    let code = hids_cli::run_cli(std::env::args(), &mut stdout, &mut stderr);
    ExitCode::from(code as u8)
}
