use clap::Parser;
use melsynth_cli::args::Cli;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = melsynth_cli::run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
