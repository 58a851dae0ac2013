use clap::Parser;
use nlcalc::cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(failure) = run(cli) {
        eprintln!("{}", failure.to_json());
        std::process::exit(failure.exit_code());
    }
}
