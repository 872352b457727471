use clap::Parser;
use stormflux::cli::{execute, Cli};

fn main() {
    tracing_subscriber::fmt().with_writer(std::io::stderr).init();
    if let Err(f) = execute(Cli::parse()) {
        eprintln!("{}", serde_json::to_string(&f.body).expect("error body serializes"));
        std::process::exit(f.exit_code);
    }
}
