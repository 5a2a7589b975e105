use clap::Parser;

use mstpp::cli::{run, Cli};

fn main() {
    std::process::exit(run(Cli::parse()));
}
