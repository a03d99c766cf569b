use clap::Parser;

fn main() {
    let cli = petrovkit::cli::Cli::parse();
    if let Err(e) = petrovkit::cli::execute(cli) {
        eprintln!("petrovkit: error: {e}");
        std::process::exit(1);
    }
}
