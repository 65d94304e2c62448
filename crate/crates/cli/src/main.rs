use clap::Parser;

fn main() -> std::process::ExitCode {
    std::process::ExitCode::from(randnls_cli::run(randnls_cli::Cli::parse()))
}
