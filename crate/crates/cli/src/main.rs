use clap::Parser;
use tracing_subscriber::EnvFilter;

fn main() {
    let cli = sste_cli::Cli::parse();
    let default = if cli.verbose { "info" } else { "warn" };
    tracing_subscriber::fmt()
        .with_env_filter(
            EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(default)),
        )
        .with_writer(std::io::stderr)
        .init();
    if let Err(e) = sste_cli::run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
