mod commands;
mod output;
mod svg;

use clap::Parser;

fn main() {
    let cli = commands::Cli::parse();
    if let Err(e) = commands::run(cli) {
        eprintln!("error: {}", e.message);
        std::process::exit(e.code);
    }
}
