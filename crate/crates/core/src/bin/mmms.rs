use clap::Parser;

fn main() {
    let cli = mmms::cli::Cli::parse();
    if let Err(e) = mmms::cli::run(cli) {
        eprintln!("mmms: {e}");
        std::process::exit(e.exit_code());
    }
}
