use clap::Parser;

use sole_harness::cli::{run, Cli};
use sole_harness::report::EXIT_USAGE;

fn main() {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(EXIT_USAGE);
        }
    }
}
