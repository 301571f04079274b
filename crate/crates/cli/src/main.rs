use clap::Parser;

fn main() {
    let cli = ardm_cli::Cli::parse();
    if let Err(e) = ardm_cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
