use std::process::ExitCode;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(alphafunnel::cli::LOG_ENV, "warn")).init();
    alphafunnel::cli::run(std::env::args_os())
}
