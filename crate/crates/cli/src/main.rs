use clap::Parser;

fn main() {
    let cli = ccnf_cli::Cli::parse();
    if let Err(e) = ccnf_cli::run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
