//! `edgekit` binary: exit 0 on success, 1 on domain errors, 2 on usage
//! errors (clap's convention).

mod args;
mod commands;
mod table;

use clap::Parser;

fn main() {
    let cli = match args::Cli::try_parse() {
        Ok(cli) => cli,
        // Help and version requests also land here; exit() gives them 0.
        Err(e) => e.exit(),
    };
    if let Err(e) = commands::run(cli.command) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
