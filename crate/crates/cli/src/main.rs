use clap::Parser;
use rankid_cli::config::Cli;

fn main() {
    let cli = Cli::parse();
    std::process::exit(rankid_cli::run(&cli.command));
}
